#pragma once

#include <cstdint>
#include <random>

namespace adn {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent deterministic substream of a master seed. All randomness in a
/// run flows from one seed through these streams.
inline std::mt19937 make_rng(uint64_t seed, uint64_t stream) {
  return std::mt19937(static_cast<uint32_t>(splitmix64(seed * 0x100000001b3ULL + stream)));
}

}  // namespace adn
