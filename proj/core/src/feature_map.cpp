#include "sla/feature_map.hpp"

#include <cmath>
#include <stdexcept>

namespace sla {

namespace {

template <typename T>
void softmax_row(T* row, std::size_t d) {
  T m = row[0];
  for (std::size_t c = 1; c < d; ++c) m = std::max(m, row[c]);
  T sum = 0;
  for (std::size_t c = 0; c < d; ++c) {
    row[c] = std::exp(row[c] - m);
    sum += row[c];
  }
  for (std::size_t c = 0; c < d; ++c) row[c] /= sum;
}

}  // namespace

template <typename T>
Mat<T> apply_feature_map(const Mat<T>& x, FeatureMapKind kind) {
  Mat<T> out = x;
  switch (kind) {
    case FeatureMapKind::elu1:
      for (auto& v : out.data) v = v >= T(0) ? v + T(1) : std::exp(v);
      break;
    case FeatureMapKind::relu:
      for (auto& v : out.data) v = std::max(v, T(0));
      break;
    case FeatureMapKind::feat_softmax:
      for (std::size_t i = 0; i < out.rows; ++i)
        softmax_row(out.row(i), out.cols);
      break;
  }
  return out;
}

template <typename T>
Mat<T> feature_map_vjp(const Mat<T>& x, FeatureMapKind kind,
                       const Mat<T>& d_phi) {
  if (!x.same_shape(d_phi))
    throw std::invalid_argument("feature_map_vjp: shape mismatch");
  Mat<T> out(x.rows, x.cols);
  switch (kind) {
    case FeatureMapKind::elu1:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] =
            (x.data[i] >= T(0) ? T(1) : std::exp(x.data[i])) * d_phi.data[i];
      break;
    case FeatureMapKind::relu:
      for (std::size_t i = 0; i < x.data.size(); ++i)
        out.data[i] = x.data[i] > T(0) ? d_phi.data[i] : T(0);
      break;
    case FeatureMapKind::feat_softmax:
      for (std::size_t i = 0; i < x.rows; ++i) {
        // s .* (g - <s, g>), the softmax Jacobian applied to the cotangent
        Mat<T> s_row(1, x.cols);
        for (std::size_t c = 0; c < x.cols; ++c) s_row(0, c) = x(i, c);
        softmax_row(s_row.row(0), x.cols);
        T dot = 0;
        for (std::size_t c = 0; c < x.cols; ++c)
          dot += s_row(0, c) * d_phi(i, c);
        for (std::size_t c = 0; c < x.cols; ++c)
          out(i, c) = s_row(0, c) * (d_phi(i, c) - dot);
      }
      break;
  }
  return out;
}

template MatF apply_feature_map<float>(const MatF&, FeatureMapKind);
template MatD apply_feature_map<double>(const MatD&, FeatureMapKind);
template MatF feature_map_vjp<float>(const MatF&, FeatureMapKind, const MatF&);
template MatD feature_map_vjp<double>(const MatD&, FeatureMapKind, const MatD&);

}  // namespace sla
