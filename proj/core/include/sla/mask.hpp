#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sla/layout.hpp"
#include "sla/mat.hpp"

namespace sla {

/// Row-stochastic T_m x T_n grid of predicted block weights.
struct CompressedWeights {
  MatD p_c;
};

/// Three-way block classification: 1 critical (exact attention),
/// 0 marginal (linear attention), -1 negligible (skipped), plus per-row
/// index lists for fast iteration.
///
/// classify_mask guarantees >= 1 critical block per row. Masks injected
/// for tests may carry rows with none; the kernels define zero outputs
/// for those rows.
struct CompressedMask {
  std::size_t t_m = 0;
  std::size_t t_n = 0;
  std::vector<std::int8_t> labels;  // row-major, values in {-1, 0, 1}

  std::vector<std::vector<std::uint32_t>> critical_idx;  // per row, ascending
  std::vector<std::vector<std::uint32_t>> marginal_idx;  // per row, ascending

  struct RowCounts {
    std::size_t critical = 0;
    std::size_t marginal = 0;
    std::size_t negligible = 0;
  };
  std::vector<RowCounts> counts;

  int label(std::size_t i, std::size_t j) const {
    return labels[i * t_n + j];
  }

  std::size_t total_critical() const;
  std::size_t total_marginal() const;
  double critical_fraction() const;
  double marginal_fraction() const;

  /// Columns j in ascending order whose block-row set {i : label(i,j)=0}
  /// is needed by the backward pass.
  std::vector<std::uint32_t> marginal_rows_of_column(std::size_t j) const;
};

/// Mean over groups of b consecutive rows. b must divide X.rows.
MatD pool_mean(const MatD& x, std::size_t b);

/// Row softmax of pool(Q) pool(K)^T / sqrt(d). Computed in f64 regardless
/// of kernel dtype; classification only compares values, so this keeps the
/// mask identical across kernel precisions.
CompressedWeights predict_compressed_weights(const MatD& q, const MatD& k,
                                             const BlockLayout& layout);

/// Per-row top/bottom percentage classification.
/// n1 = max(1, round_half_up(k_h * t_n / 100)) largest entries -> 1,
/// n_neg = round_half_up(k_l * t_n / 100) smallest -> -1 (capped so
/// n1 + n_neg <= t_n, critical wins), rest -> 0. Ties break toward the
/// lower column index taking the higher class.
CompressedMask classify_mask(const CompressedWeights& weights, double k_h,
                             double k_l);

/// Index lists and counts from a raw label grid.
CompressedMask build_lookup(std::size_t t_m, std::size_t t_n,
                            std::vector<std::int8_t> labels);

/// Fixture format: {"T_m": int, "T_n": int, "labels": row-major array}.
std::string mask_to_json(const CompressedMask& mask);
CompressedMask mask_from_json(const std::string& text);

}  // namespace sla
