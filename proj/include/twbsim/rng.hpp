#pragma once

#include <cstdint>
#include <random>

namespace twb {

using Rng = std::mt19937_64;

// splitmix64 finalizer, used to whiten substream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stream tags keep independently seeded parts of a run from colliding.
// Anything that loops over work units derives one substream per unit, so
// results do not depend on thread count or evaluation order.
namespace tags {
inline constexpr std::uint64_t dataset = 0x01;      // +bit
inline constexpr std::uint64_t bootstrap = 0x10;
inline constexpr std::uint64_t sweep = 0x20;        // +fraction index
inline constexpr std::uint64_t key = 0x40;          // +key index
inline constexpr std::uint64_t calibration = 0x50;
inline constexpr std::uint64_t characterize = 0x60;
inline constexpr std::uint64_t acceptance = 0x70;
}  // namespace tags

inline Rng substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ tag);
  h = mix64(h ^ index);
  return Rng{h};
}

}  // namespace twb
