#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "pszsim/types.hpp"

namespace psz {

using RngStream = std::mt19937_64;

/// SplitMix64 step; also used as the seed-mixing primitive.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives a stream seed from a master seed and a path of indices
/// (e.g. {frequency_index, run_index, role}). Each component is folded
/// through SplitMix64 so distinct paths give statistically independent
/// streams and the result does not depend on evaluation order of the
/// work items.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = master;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t p : path) {
    state = out ^ (p + 0x9E3779B97F4A7C15ULL);
    out = splitmix64(state);
  }
  return out;
}

inline RngStream make_stream(std::uint64_t master,
                             std::initializer_list<std::uint64_t> path) {
  return RngStream(derive_seed(master, path));
}

/// One draw from the circular complex Gaussian CN(0, total_variance):
/// real and imaginary parts are independent N(0, total_variance / 2).
inline Complex complex_gaussian(RngStream& rng, double total_variance) {
  std::normal_distribution<double> part(0.0, std::sqrt(total_variance / 2.0));
  const double re = part(rng);
  const double im = part(rng);
  return {re, im};
}

inline CVector complex_gaussian_vector(RngStream& rng, Eigen::Index n,
                                       double total_variance) {
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = complex_gaussian(rng, total_variance);
  return v;
}

}  // namespace psz
