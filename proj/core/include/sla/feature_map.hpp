#pragma once

#include "sla/config.hpp"
#include "sla/mat.hpp"

namespace sla {

/// phi(X), applied row-wise.
///  elu1:         x+1 for x >= 0, exp(x) for x < 0 (strictly positive)
///  relu:         max(x, 0)
///  feat_softmax: softmax over the d entries of each row (rows sum to 1)
template <typename T>
Mat<T> apply_feature_map(const Mat<T>& x, FeatureMapKind kind);

/// J_phi(X)^T * d_phi, row-wise. For elementwise kinds this is
/// phi'(X) .* d_phi; for feat_softmax each row applies
/// s .* (g - <s, g>) with s the row's softmax output.
template <typename T>
Mat<T> feature_map_vjp(const Mat<T>& x, FeatureMapKind kind,
                       const Mat<T>& d_phi);

}  // namespace sla
