#include "sla/summaries.hpp"

#include <stdexcept>

namespace sla {

template <typename T>
void KvSummaries<T>::refresh_totals() {
  h_total = Mat<T>(d, d);
  z_total.assign(d, T(0));
  for (std::size_t j = 0; j < count; ++j) {
    add_inplace(h_total, h[j]);
    for (std::size_t c = 0; c < d; ++c) z_total[c] += z[j][c];
  }
}

template <typename T>
KvSummaries<T> precompute_kv_summaries(const Mat<T>& k_feat, const Mat<T>& v,
                                       const BlockLayout& layout) {
  if (k_feat.rows != layout.n || k_feat.cols != layout.d ||
      v.rows != layout.n || v.cols != layout.d)
    throw std::invalid_argument("precompute_kv_summaries: shape mismatch");

  KvSummaries<T> s(layout.t_n, layout.d);
  for (std::size_t j = 0; j < layout.t_n; ++j) {
    Mat<T>& hj = s.h[j];
    std::vector<T>& zj = s.z[j];
    for (std::size_t t = j * layout.b_kv; t < (j + 1) * layout.b_kv; ++t) {
      const T* kf = k_feat.row(t);
      const T* vt = v.row(t);
      for (std::size_t a = 0; a < layout.d; ++a) {
        zj[a] += kf[a];
        const T ka = kf[a];
        if (ka == T(0)) continue;
        T* ha = hj.row(a);
        for (std::size_t b = 0; b < layout.d; ++b) ha[b] += ka * vt[b];
      }
    }
  }
  s.refresh_totals();
  return s;
}

template struct KvSummaries<float>;
template struct KvSummaries<double>;
template KvSummaries<float> precompute_kv_summaries<float>(const MatF&, const MatF&, const BlockLayout&);
template KvSummaries<double> precompute_kv_summaries<double>(const MatD&, const MatD&, const BlockLayout&);

}  // namespace sla
