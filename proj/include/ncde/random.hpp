#pragma once

#include <cstdint>
#include <random>

namespace ncde {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive decorrelated sub-seeds.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31U);
}

/// Seed of the `stream`-th sub-stream of `master`. Streams are indexed by a
/// counter, so generation order does not affect the values.
[[nodiscard]] constexpr std::uint64_t sub_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

[[nodiscard]] inline Rng make_rng(std::uint64_t master, std::uint64_t stream) {
  return Rng(sub_seed(master, stream));
}

}  // namespace ncde
