#pragma once

#include <vector>

#include "sla/layout.hpp"
#include "sla/mask.hpp"
#include "sla/mat.hpp"

namespace sla {

/// Dense brute-force references, always f64, intentionally O(N^2 d).
/// These are the ground truth the block kernels are checked against.

struct DenseAttentionArtifacts {
  MatD s;  // N x N scores, Q K^T / sqrt(d)
  MatD p;  // N x N row-stochastic weights
  MatD o;  // N x d output P V
};

DenseAttentionArtifacts dense_attention_forward(const MatD& q, const MatD& k,
                                                const MatD& v);

/// Softmax restricted to blocks labeled 1: scores outside them are -inf.
/// Rows with every column excluded produce zero output rows.
MatD dense_masked_attention_forward(const MatD& q, const MatD& k, const MatD& v,
                                    const CompressedMask& mask,
                                    const BlockLayout& layout);

/// Same restriction applied to an explicit score matrix. Lets tests shift
/// scores row-wise without touching Q or K.
MatD dense_masked_attention_from_scores(const MatD& scores, const MatD& v,
                                        const CompressedMask& mask,
                                        const BlockLayout& layout);

/// Per-row logsumexp over the restricted score set; rows with no critical
/// block report -infinity.
std::vector<double> dense_masked_logsumexp(const MatD& q, const MatD& k,
                                           const CompressedMask& mask,
                                           const BlockLayout& layout);

/// Linear attention restricted to blocks labeled 0, in the summary form:
/// per block-row i, H_i = sum phi(K_j)^T V_j and Z_i = sum of phi(K) rows,
/// output rows phi(Q) H_i / (phi(Q) . Z_i). Rows whose denominator is zero
/// (no marginal blocks, or relu wiping the overlap) are zero.
MatD dense_masked_linear_forward(const MatD& q_feat, const MatD& k_feat,
                                 const MatD& v, const CompressedMask& mask,
                                 const BlockLayout& layout);

struct DenseGradients {
  MatD dq;       // restricted-softmax path
  MatD dk;       // restricted-softmax path
  MatD dv;       // both paths accumulated
  MatD dq_feat;  // w.r.t. phi(Q)
  MatD dk_feat;  // w.r.t. phi(K)
};

/// Explicit dense chain rule through both restricted paths. The feature
/// map itself is not differentiated here; compose with feature_map_vjp.
DenseGradients dense_backward(const MatD& q, const MatD& k, const MatD& v,
                              const MatD& q_feat, const MatD& k_feat,
                              const CompressedMask& mask,
                              const BlockLayout& layout,
                              const MatD& d_out_sparse,
                              const MatD& d_out_linear);

}  // namespace sla
