#include "mafin/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "mafin/error.hpp"
#include "mafin/hashing.hpp"

namespace mafin {

std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return mix64(parent ^ hash_bytes(label, 0x6d6166696eULL));
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw UsageError("uniform_index requires n > 0");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

double Rng::uniform_real() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1;
  do {
    u1 = uniform_real();
  } while (u1 <= 0.0);
  const double u2 = uniform_real();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace mafin
