#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "sla/aggregation.hpp"
#include "sla/config.hpp"
#include "sla/layout.hpp"
#include "sla/mask.hpp"
#include "sla/mat.hpp"
#include "sla/summaries.hpp"

namespace sla {

/// Logsumexp placeholder for query rows whose block-row has no critical
/// block: the sparse output row is zero and this value marks "no mass".
template <typename T>
constexpr T lse_sentinel() {
  if constexpr (sizeof(T) == 4)
    return T(-1e30);
  else
    return T(-1e300);
}

/// Learnable d x d map applied to the linear-path output before the sum.
template <typename T>
struct OutputProjection {
  Mat<T> w;
};

/// Everything the backward pass needs from one forward call.
template <typename T>
struct SlaForwardState {
  Mat<T> sparse_out;                  // N x d
  Mat<T> linear_out;                  // N x d
  std::vector<T> row_lse;             // length N, sentinel where no critical mass
  std::vector<Mat<T>> row_h;          // per block-row aggregated d x d summary
  std::vector<std::vector<T>> row_z;  // per block-row aggregated length-d sums
  CompressedMask mask;
  KvSummaries<T> summaries;
  Mat<T> q_feat, k_feat;              // phi(Q), phi(K)
};

/// Execution counters for benchmarking; block-level, not flop-level.
struct ExecCounters {
  std::uint64_t sparse_block_matmuls = 0;  // score + weight-value pairs
  std::uint64_t linear_row_products = 0;   // rows sent through phi(Q) H_i
  AggCounters aggregation;
};

/// Streaming restricted softmax over the given column blocks, in the given
/// order, for one query block. Writes the block's rows of `out` and `lse`.
/// l stays zero when the column list is empty: those rows are zero and get
/// the sentinel logsumexp.
template <typename T>
void sparse_block_row_forward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                              const BlockLayout& layout, std::size_t block_row,
                              const std::vector<std::uint32_t>& column_blocks,
                              Mat<T>& out, std::vector<T>& lse,
                              std::uint64_t* block_matmuls = nullptr);

/// Full forward pass with the mask predicted from the current Q, K.
template <typename T>
SlaForwardState<T> sla_forward(const Mat<T>& q, const Mat<T>& k,
                               const Mat<T>& v, const SlaConfig& cfg,
                               const BlockLayout& layout, unsigned threads = 1,
                               ExecCounters* counters = nullptr);

/// Forward pass against an injected mask (tests, frozen-mask training).
template <typename T>
SlaForwardState<T> sla_forward_with_mask(const Mat<T>& q, const Mat<T>& k,
                                         const Mat<T>& v,
                                         const CompressedMask& mask,
                                         const SlaConfig& cfg,
                                         const BlockLayout& layout,
                                         unsigned threads = 1,
                                         ExecCounters* counters = nullptr);

/// O = O^s + O^l W
template <typename T>
Mat<T> combine_outputs(const SlaForwardState<T>& state,
                       const OutputProjection<T>& proj);

}  // namespace sla
