#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace mafin {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seeded 64-bit string hash (FNV-1a over the bytes, then mixed with the seed).
/// Stable across platforms and runs.
std::uint64_t hash_bytes(std::string_view bytes, std::uint64_t seed);

using Sha256Digest = std::array<std::uint8_t, 32>;

Sha256Digest sha256(std::string_view bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace mafin
