#pragma once

#include <cstdint>
#include <random>

#include "dvae/types.hpp"

namespace dvae {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Child streams are seeded as
/// derive_seed(parent, counter) so that work split into fixed-size chunks
/// draws the same numbers no matter how the chunks are scheduled.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat out(rows, cols);
  // Fill row by row so the draw order is layout independent.
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  return out;
}

}  // namespace dvae
