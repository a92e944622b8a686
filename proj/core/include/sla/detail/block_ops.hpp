#pragma once

#include <cmath>

#include "sla/layout.hpp"
#include "sla/mat.hpp"

namespace sla::detail {

/// out = Q_bi K_bj^T / sqrt(d), a b_q x b_kv tile. out must be pre-sized.
template <typename T>
void score_block(const Mat<T>& q, const Mat<T>& k, const BlockLayout& layout,
                 std::size_t bi, std::size_t bj, Mat<T>& out) {
  const T inv_sqrt_d = T(1) / std::sqrt(T(layout.d));
  const std::size_t r0 = bi * layout.b_q;
  const std::size_t c0 = bj * layout.b_kv;
  for (std::size_t r = 0; r < layout.b_q; ++r) {
    const T* qr = q.row(r0 + r);
    for (std::size_t c = 0; c < layout.b_kv; ++c) {
      const T* kc = k.row(c0 + c);
      T acc = 0;
      for (std::size_t e = 0; e < layout.d; ++e) acc += qr[e] * kc[e];
      out(r, c) = acc * inv_sqrt_d;
    }
  }
}

}  // namespace sla::detail
