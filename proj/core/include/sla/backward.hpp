#pragma once

#include <tuple>

#include "sla/forward.hpp"

namespace sla {

template <typename T>
struct SlaGradients {
  Mat<T> dq, dk;          // sparse-path gradients w.r.t. Q and K
  Mat<T> dv;              // both paths, accumulated
  Mat<T> dq_feat, dk_feat;  // w.r.t. phi(Q) and phi(K)
  Mat<T> dproj;           // d x d projection gradient
  Mat<T> dq_total, dk_total;  // after composing the feature-map VJP
};

/// Backward of O = O^s + O^l W given the combined-output cotangent:
/// returns (dO^s = dO, dO^l = dO W^T, dW = (O^l)^T dO).
template <typename T>
std::tuple<Mat<T>, Mat<T>, Mat<T>> proj_backward(const Mat<T>& d_out,
                                                 const Mat<T>& linear_out,
                                                 const Mat<T>& w);

/// Gradients through both paths from the cached forward state.
///
/// The sparse path recomputes P = exp(S - L) per critical block; the
/// linear path forms per-block-row dH_i / dZ_i, then aggregates them per
/// key column with the configured strategy. dproj treats d_out_sparse as
/// the combined-output cotangent, which is what proj_backward hands over.
/// The mask is a constant: nothing differentiates through classification.
template <typename T>
SlaGradients<T> sla_backward(const SlaForwardState<T>& state, const Mat<T>& q,
                             const Mat<T>& k, const Mat<T>& v,
                             const Mat<T>& d_out_sparse,
                             const Mat<T>& d_out_linear, const SlaConfig& cfg,
                             const BlockLayout& layout, unsigned threads = 1,
                             ExecCounters* counters = nullptr);

}  // namespace sla
