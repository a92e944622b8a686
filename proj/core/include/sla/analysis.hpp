#pragma once

#include <cstdint>
#include <vector>

#include "sla/mat.hpp"

namespace sla {

/// Population fractions of attention weights against the 1/N and 1/(100N)
/// thresholds, plus log-spaced bins for plotting. Strict inequalities on
/// both thresholds, so a perfectly uniform matrix is all "middle".
struct WeightHistogram {
  double frac_above_mean = 0;  // entries > 1/N
  double frac_below_tiny = 0;  // entries < 1/(100N)
  double frac_middle = 0;
  std::vector<double> bin_edges;        // log-spaced, 1e-10 .. 1
  std::vector<std::uint64_t> bin_counts;  // bin 0 also catches underflow
};

/// P should be row-stochastic; a row sum off by more than 1e-6 only warns
/// (stderr) and the scan proceeds.
WeightHistogram weight_histogram(const MatD& p);

/// ||A||_F^2 / ||A||_2^2. The spectral norm comes from power iteration on
/// the Gram matrix, relative tolerance 1e-8, at most 5000 iterations, with
/// a fixed pseudo-random start vector so results are reproducible.
/// Throws std::invalid_argument for an all-zero matrix.
double stable_rank(const MatD& a);

struct DecompositionReport {
  double stable_rank_full = 0;
  double stable_rank_top = 0;   // P restricted to the kept entries
  double stable_rank_rest = 0;  // remainder; 0 when that component is zero
  double top_fraction = 0;
};

/// Global (not per-row) split: the round(top_fraction * N^2) largest
/// entries form the kept component, ties broken by flat index. The two
/// components add back to P exactly, entry for entry.
DecompositionReport decompose_weights(const MatD& p, double top_fraction);

/// Relative L1 error of renormalized sparse attention that keeps the
/// globally largest keep_fraction of attention weights (with at least one
/// surviving entry per row). Exactly 0 at keep_fraction = 1.
double sparse_approx_error(const MatD& q, const MatD& k, const MatD& v,
                           double keep_fraction);

}  // namespace sla
