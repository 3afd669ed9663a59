#pragma once

#include <cstdint>
#include <string>

#include "mafin/augmodel.hpp"
#include "mafin/scoring.hpp"

namespace mafin {

/// MAFW checkpoint, little-endian:
///   "MAFW" | version u32 | F u32 | d_aug u32 | mode u8 | hasher seed u64
///   | d_aug x F f64 (row-major) | CRC32 u32 over all preceding bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_augmenting_model(const AugmentingModel& model, const std::string& path);
/// Throws DataError on bad magic, unsupported version, truncation, or CRC mismatch.
AugmentingModel load_augmenting_model(const std::string& path);

/// MAFL transform checkpoint, little-endian:
///   "MAFL" | version u32 | mode u8 | D u32 | R u32 | weights f64 | CRC32 u32.
/// Full mode stores D x D; low-rank stores W_l then W_r, each D x R row-major.
void save_linear_transform(const LinearTransform& transform, const std::string& path);
LinearTransform load_linear_transform(const std::string& path);

}  // namespace mafin
