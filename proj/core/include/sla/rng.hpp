#pragma once

#include <cstdint>

#include "sla/mat.hpp"

namespace sla {

/// SplitMix64 (Steele, Lea, Flood 2014). Chosen as the fixture generator
/// because the whole stream is pinned by three constants, so any language
/// can reproduce identical tensors from a seed:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// uniform(): ((next() >> 11) + 1) * 2^-53, in (0, 1].
/// gaussian(): Box-Muller, sqrt(-2 ln u1) * cos(2 pi u2), one value per
/// two uniform draws (the sine partner is discarded).
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() {
    return double((next() >> 11) + 1) * 0x1.0p-53;
  }

  /// uniform in [lo, hi)
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * (uniform() - 0x1.0p-53);
  }

  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }
};

inline MatD gaussian_mat(SplitMix64& rng, std::size_t rows, std::size_t cols,
                         double stddev = 1.0) {
  MatD m(rows, cols);
  for (auto& v : m.data) v = stddev * rng.gaussian();
  return m;
}

inline MatD uniform_mat(SplitMix64& rng, std::size_t rows, std::size_t cols,
                        double lo = -1.0, double hi = 1.0) {
  MatD m(rows, cols);
  for (auto& v : m.data) v = rng.uniform(lo, hi);
  return m;
}

}  // namespace sla
