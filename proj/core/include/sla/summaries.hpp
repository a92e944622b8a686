#pragma once

#include <vector>

#include "sla/layout.hpp"
#include "sla/mat.hpp"

namespace sla {

/// Per-block summary pairs: a d x d matrix and a length-d vector per block,
/// plus their totals. For the forward pass these are the KV summaries
/// h_j = phi(K_j)^T V_j and z_j = column sums of phi(K_j); the backward
/// pass reuses the container for per-block-row gradient summaries, since
/// the aggregation strategies only care about the shape.
template <typename T>
struct KvSummaries {
  std::size_t count = 0;  // number of blocks
  std::size_t d = 0;
  std::vector<Mat<T>> h;            // count matrices, each d x d
  std::vector<std::vector<T>> z;    // count vectors, each length d
  Mat<T> h_total;                   // sum of all h
  std::vector<T> z_total;           // sum of all z

  KvSummaries() = default;
  KvSummaries(std::size_t count_, std::size_t d_)
      : count(count_),
        d(d_),
        h(count_, Mat<T>(d_, d_)),
        z(count_, std::vector<T>(d_, T(0))),
        h_total(d_, d_),
        z_total(d_, T(0)) {}

  /// Recompute h_total / z_total by ascending-index summation.
  void refresh_totals();
};

/// h_j = phi(K_j)^T V_j, z_j[c] = sum over the block's tokens of phi(K)[t,c].
template <typename T>
KvSummaries<T> precompute_kv_summaries(const Mat<T>& k_feat, const Mat<T>& v,
                                       const BlockLayout& layout);

}  // namespace sla
