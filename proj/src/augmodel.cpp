#include "mafin/augmodel.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <map>

#include "mafin/diagnostics.hpp"
#include "mafin/error.hpp"
#include "mafin/hashing.hpp"
#include "mafin/rng.hpp"

namespace mafin {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

// Salts keep n-gram families and word unigrams in separate hash streams.
constexpr std::uint64_t kWordSalt = 0x776f7264ULL;

}  // namespace

FeatureHasher::FeatureHasher(std::uint32_t feature_dim, std::uint64_t seed)
    : feature_dim_(feature_dim), seed_(seed) {
  if (feature_dim == 0 || (feature_dim & (feature_dim - 1)) != 0) {
    throw UsageError("feature dimension must be a power of two, got " +
                     std::to_string(feature_dim));
  }
}

SparseFeatures FeatureHasher::featurize(std::string_view text) const {
  if (text.empty()) throw UsageError("cannot featurize an empty text");
  std::string lower(text);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  std::map<std::uint32_t, double> counts;
  auto add = [&](std::string_view gram, std::uint64_t salt) {
    const std::uint64_t h = hash_bytes(gram, seed_ ^ salt);
    const auto idx = static_cast<std::uint32_t>(h & (feature_dim_ - 1));
    counts[idx] += (h >> 63) != 0 ? -1.0 : 1.0;
  };

  const std::string_view view(lower);
  for (std::size_t n = 3; n <= 5; ++n) {
    for (std::size_t i = 0; i + n <= view.size(); ++i) add(view.substr(i, n), mix64(n));
  }
  std::size_t i = 0;
  while (i < view.size()) {
    while (i < view.size() && !is_word_byte(static_cast<unsigned char>(view[i]))) ++i;
    std::size_t j = i;
    while (j < view.size() && is_word_byte(static_cast<unsigned char>(view[j]))) ++j;
    if (j > i) add(view.substr(i, j - i), kWordSalt);
    i = j;
  }

  SparseFeatures out;
  for (const auto& [idx, c] : counts) {
    if (c == 0.0) continue;
    out.index.push_back(idx);
    out.value.push_back(c);
  }
  if (!out.value.empty()) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(out.value.size()));
    for (double& v : out.value) v *= scale;
  }
  return out;
}

const char* to_string(EmbeddingMode mode) {
  return mode == EmbeddingMode::normalized ? "normalized" : "unnormalized";
}

EmbeddingMode embedding_mode_from_string(std::string_view name) {
  if (name == "normalized") return EmbeddingMode::normalized;
  if (name == "unnormalized") return EmbeddingMode::unnormalized;
  throw UsageError("unknown embedding mode '" + std::string(name) +
                   "' (expected normalized|unnormalized)");
}

std::span<double> AugGradient::column(std::uint32_t feature) {
  auto [it, inserted] = columns_.try_emplace(feature);
  if (inserted) it->second.assign(rows_, 0.0);
  return it->second;
}

double AugGradient::get(std::size_t row, std::uint32_t feature) const {
  auto it = columns_.find(feature);
  return it == columns_.end() ? 0.0 : it->second[row];
}

void AugGradient::scale(double factor) {
  for (auto& [f, col] : columns_) {
    for (double& v : col) v *= factor;
  }
}

void AugGradient::add(const AugGradient& other) {
  for (const auto& [f, col] : other.columns_) {
    auto dst = column(f);
    for (std::size_t r = 0; r < rows_; ++r) dst[r] += col[r];
  }
}

double AugGradient::squared_norm() const {
  double s = 0.0;
  for (const auto& [f, col] : columns_) {
    for (double v : col) s += v * v;
  }
  return s;
}

AugmentingModel::AugmentingModel(FeatureHasher hasher, std::size_t d_aug, EmbeddingMode mode)
    : hasher_(hasher), d_aug_(d_aug), mode_(mode) {
  if (d_aug == 0) throw UsageError("augmenting dimension must be positive");
  weights_.assign(static_cast<std::size_t>(hasher_.feature_dim()) * d_aug_, 0.0);
}

AugmentingModel AugmentingModel::random(FeatureHasher hasher, std::size_t d_aug,
                                        EmbeddingMode mode, std::uint64_t seed) {
  AugmentingModel model(hasher, d_aug, mode);
  const double bound = mode == EmbeddingMode::normalized
                           ? 1.0 / std::sqrt(static_cast<double>(hasher.feature_dim()))
                           : std::sqrt(3.0 / static_cast<double>(d_aug));
  Rng rng(derive_seed(seed, "augmodel.init"));
  // Row-major draw order so the stream does not depend on the storage layout.
  for (std::size_t r = 0; r < d_aug; ++r) {
    for (std::uint32_t f = 0; f < hasher.feature_dim(); ++f) {
      model.set_weight(r, f, (2.0 * rng.uniform_real() - 1.0) * bound);
    }
  }
  return model;
}

Encoded AugmentingModel::encode(const SparseFeatures& features) const {
  Encoded out;
  out.raw.assign(d_aug_, 0.0);
  for (std::size_t k = 0; k < features.nnz(); ++k) {
    const double x = features.value[k];
    const double* col = &weights_[static_cast<std::size_t>(features.index[k]) * d_aug_];
    for (std::size_t r = 0; r < d_aug_; ++r) out.raw[r] += x * col[r];
  }
  for (double v : out.raw) {
    if (!std::isfinite(v)) throw NumericError("augmenting encoder produced a non-finite value");
  }
  out.raw_norm = l2_norm(out.raw);
  if (mode_ == EmbeddingMode::unnormalized) {
    out.emitted = EmbeddingVector(out.raw);
    return out;
  }
  if (out.raw_norm == 0.0) {
    static std::atomic<bool> logged{false};
    if (!logged.exchange(true)) {
      warn(nullptr, "augmenting encoder produced a zero vector; emitting basis vector e_0");
    }
    out.fallback = true;
    out.emitted = EmbeddingVector::basis(d_aug_, 0);
    return out;
  }
  std::vector<double> unit(out.raw);
  for (double& v : unit) v /= out.raw_norm;
  out.emitted = EmbeddingVector(std::move(unit));
  return out;
}

EmbeddingVector AugmentingModel::encode(std::string_view text) const {
  return encode(featurize(text)).emitted;
}

void AugmentingModel::encode_backward(const SparseFeatures& features, const Encoded& forward,
                                      std::span<const double> upstream, AugGradient& grad) const {
  if (upstream.size() != d_aug_) throw DimensionError("upstream gradient has wrong dimension");
  if (grad.rows() != d_aug_) throw DimensionError("gradient buffer has wrong row count");
  std::vector<double> g_raw(upstream.begin(), upstream.end());
  if (mode_ == EmbeddingMode::normalized) {
    if (forward.fallback) return;
    const auto unit = forward.emitted.values();
    const double proj = dot(unit, upstream);
    for (std::size_t r = 0; r < d_aug_; ++r) {
      g_raw[r] = (upstream[r] - unit[r] * proj) / forward.raw_norm;
    }
  }
  if (std::all_of(g_raw.begin(), g_raw.end(), [](double v) { return v == 0.0; })) return;
  for (std::size_t k = 0; k < features.nnz(); ++k) {
    const double x = features.value[k];
    auto col = grad.column(features.index[k]);
    for (std::size_t r = 0; r < d_aug_; ++r) col[r] += g_raw[r] * x;
  }
}

}  // namespace mafin
