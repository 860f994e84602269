#pragma once

#include <cstdint>

namespace relformer {

inline std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent child seed for (stream, index) under a base seed.
inline std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return SplitMix64(SplitMix64(SplitMix64(base) ^ stream) ^ index);
}

namespace seed_stream {
constexpr std::uint64_t kScene = 1;
constexpr std::uint64_t kTrajectory = 2;
constexpr std::uint64_t kDescriptor = 3;
constexpr std::uint64_t kModel = 4;
constexpr std::uint64_t kTraining = 5;
constexpr std::uint64_t kPairs = 6;
}  // namespace seed_stream

}  // namespace relformer
