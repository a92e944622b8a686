#include "sla/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sla {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_shapes(const MatD& q, const MatD& k, const MatD& v) {
  if (q.cols != k.cols || k.rows != v.rows || k.cols != v.cols ||
      q.rows != k.rows)
    throw std::invalid_argument("oracle: Q, K, V must all be N x d");
}

MatD scaled_scores(const MatD& q, const MatD& k) {
  MatD s = matmul_nt(q, k);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(q.cols));
  for (auto& v : s.data) v *= inv_sqrt_d;
  return s;
}

/// Row softmax that maps all -inf rows to zero rows.
MatD masked_row_softmax(const MatD& s) {
  MatD p(s.rows, s.cols);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double* in = s.row(i);
    double* out = p.row(i);
    double m = kNegInf;
    for (std::size_t j = 0; j < s.cols; ++j) m = std::max(m, in[j]);
    if (m == kNegInf) continue;  // fully masked row -> zeros
    double sum = 0;
    for (std::size_t j = 0; j < s.cols; ++j) {
      out[j] = std::isinf(in[j]) ? 0.0 : std::exp(in[j] - m);
      sum += out[j];
    }
    for (std::size_t j = 0; j < s.cols; ++j) out[j] /= sum;
  }
  return p;
}

void apply_block_mask(MatD& s, const CompressedMask& mask,
                      const BlockLayout& layout, int keep_label) {
  for (std::size_t i = 0; i < layout.t_m; ++i)
    for (std::size_t j = 0; j < layout.t_n; ++j) {
      if (mask.label(i, j) == keep_label) continue;
      for (std::size_t r = i * layout.b_q; r < (i + 1) * layout.b_q; ++r)
        for (std::size_t c = j * layout.b_kv; c < (j + 1) * layout.b_kv; ++c)
          s(r, c) = kNegInf;
    }
}

}  // namespace

DenseAttentionArtifacts dense_attention_forward(const MatD& q, const MatD& k,
                                                const MatD& v) {
  check_shapes(q, k, v);
  DenseAttentionArtifacts a;
  a.s = scaled_scores(q, k);
  a.p = masked_row_softmax(a.s);
  a.o = matmul(a.p, v);
  return a;
}

MatD dense_masked_attention_forward(const MatD& q, const MatD& k, const MatD& v,
                                    const CompressedMask& mask,
                                    const BlockLayout& layout) {
  check_shapes(q, k, v);
  MatD s = scaled_scores(q, k);
  return dense_masked_attention_from_scores(s, v, mask, layout);
}

MatD dense_masked_attention_from_scores(const MatD& scores, const MatD& v,
                                        const CompressedMask& mask,
                                        const BlockLayout& layout) {
  MatD s = scores;
  apply_block_mask(s, mask, layout, 1);
  MatD p = masked_row_softmax(s);
  return matmul(p, v);
}

std::vector<double> dense_masked_logsumexp(const MatD& q, const MatD& k,
                                           const CompressedMask& mask,
                                           const BlockLayout& layout) {
  MatD s = scaled_scores(q, k);
  apply_block_mask(s, mask, layout, 1);
  std::vector<double> lse(s.rows, kNegInf);
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double* row = s.row(i);
    double m = kNegInf;
    for (std::size_t j = 0; j < s.cols; ++j) m = std::max(m, row[j]);
    if (m == kNegInf) continue;
    double sum = 0;
    for (std::size_t j = 0; j < s.cols; ++j)
      if (!std::isinf(row[j])) sum += std::exp(row[j] - m);
    lse[i] = m + std::log(sum);
  }
  return lse;
}

MatD dense_masked_linear_forward(const MatD& q_feat, const MatD& k_feat,
                                 const MatD& v, const CompressedMask& mask,
                                 const BlockLayout& layout) {
  check_shapes(q_feat, k_feat, v);
  const std::size_t d = layout.d;
  MatD out(layout.n, d);
  for (std::size_t i = 0; i < layout.t_m; ++i) {
    // H_i and Z_i summed densely over every token of every marginal block
    MatD h_i(d, d);
    std::vector<double> z_i(d, 0.0);
    for (std::size_t j = 0; j < layout.t_n; ++j) {
      if (mask.label(i, j) != 0) continue;
      for (std::size_t t = j * layout.b_kv; t < (j + 1) * layout.b_kv; ++t) {
        const double* kf = k_feat.row(t);
        const double* vt = v.row(t);
        for (std::size_t a = 0; a < d; ++a) {
          z_i[a] += kf[a];
          for (std::size_t b = 0; b < d; ++b) h_i(a, b) += kf[a] * vt[b];
        }
      }
    }
    for (std::size_t r = i * layout.b_q; r < (i + 1) * layout.b_q; ++r) {
      const double* qf = q_feat.row(r);
      double den = 0;
      for (std::size_t a = 0; a < d; ++a) den += qf[a] * z_i[a];
      if (den == 0.0) continue;  // zero-row convention
      double* o = out.row(r);
      for (std::size_t a = 0; a < d; ++a) {
        const double qa = qf[a];
        if (qa == 0.0) continue;
        for (std::size_t b = 0; b < d; ++b) o[b] += qa * h_i(a, b);
      }
      for (std::size_t b = 0; b < d; ++b) o[b] /= den;
    }
  }
  return out;
}

DenseGradients dense_backward(const MatD& q, const MatD& k, const MatD& v,
                              const MatD& q_feat, const MatD& k_feat,
                              const CompressedMask& mask,
                              const BlockLayout& layout,
                              const MatD& d_out_sparse,
                              const MatD& d_out_linear) {
  check_shapes(q, k, v);
  const std::size_t n = layout.n, d = layout.d;
  DenseGradients g{MatD(n, d), MatD(n, d), MatD(n, d), MatD(n, d), MatD(n, d)};

  // --- restricted softmax path ---
  {
    MatD s = scaled_scores(q, k);
    apply_block_mask(s, mask, layout, 1);
    MatD p = masked_row_softmax(s);
    MatD o = matmul(p, v);

    // dS = P .* (dP - D), D = rowsum(dO .* O)
    MatD dp = matmul_nt(d_out_sparse, v);
    MatD ds(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      double row_d = 0;
      for (std::size_t c = 0; c < d; ++c)
        row_d += d_out_sparse(i, c) * o(i, c);
      for (std::size_t j = 0; j < n; ++j)
        ds(i, j) = p(i, j) * (dp(i, j) - row_d);
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
    MatD dq = matmul(ds, k);
    MatD dk = matmul_tn(ds, q);
    for (std::size_t i = 0; i < dq.data.size(); ++i) {
      g.dq.data[i] = dq.data[i] * inv_sqrt_d;
      g.dk.data[i] = dk.data[i] * inv_sqrt_d;
    }
    g.dv = matmul_tn(p, d_out_sparse);
  }

  // --- restricted linear path ---
  for (std::size_t i = 0; i < layout.t_m; ++i) {
    MatD h_i(d, d);
    std::vector<double> z_i(d, 0.0);
    for (std::size_t j = 0; j < layout.t_n; ++j) {
      if (mask.label(i, j) != 0) continue;
      for (std::size_t t = j * layout.b_kv; t < (j + 1) * layout.b_kv; ++t) {
        const double* kf = k_feat.row(t);
        const double* vt = v.row(t);
        for (std::size_t a = 0; a < d; ++a) {
          z_i[a] += kf[a];
          for (std::size_t b = 0; b < d; ++b) h_i(a, b) += kf[a] * vt[b];
        }
      }
    }

    MatD dh_i(d, d);
    std::vector<double> dz_i(d, 0.0);
    for (std::size_t r = i * layout.b_q; r < (i + 1) * layout.b_q; ++r) {
      const double* qf = q_feat.row(r);
      double den = 0;
      for (std::size_t a = 0; a < d; ++a) den += qf[a] * z_i[a];
      if (den == 0.0) continue;  // forward row was constant zero

      // recompute the output row for D = <dO, O>
      std::vector<double> o_row(d, 0.0);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) o_row[b] += qf[a] * h_i(a, b);
      double row_d = 0;
      for (std::size_t b = 0; b < d; ++b) {
        o_row[b] /= den;
        row_d += d_out_linear(r, b) * o_row[b];
      }

      for (std::size_t a = 0; a < d; ++a) {
        const double qa = qf[a] / den;
        for (std::size_t b = 0; b < d; ++b)
          dh_i(a, b) += qa * d_out_linear(r, b);
        dz_i[a] -= qa * row_d;
      }
      // dQ^phi row: (g H^T - D Z^T) / den
      for (std::size_t a = 0; a < d; ++a) {
        double acc = 0;
        for (std::size_t b = 0; b < d; ++b)
          acc += d_out_linear(r, b) * h_i(a, b);
        g.dq_feat(r, a) = (acc - row_d * z_i[a]) / den;
      }
    }

    // scatter dH_i / dZ_i back to every marginal key block of this row
    for (std::size_t j = 0; j < layout.t_n; ++j) {
      if (mask.label(i, j) != 0) continue;
      for (std::size_t t = j * layout.b_kv; t < (j + 1) * layout.b_kv; ++t) {
        const double* kf = k_feat.row(t);
        const double* vt = v.row(t);
        for (std::size_t a = 0; a < d; ++a) {
          double acc = 0;
          for (std::size_t b = 0; b < d; ++b) acc += vt[b] * dh_i(a, b);
          g.dk_feat(t, a) += acc + dz_i[a];
        }
        double* dvt = g.dv.row(t);
        for (std::size_t b = 0; b < d; ++b) {
          double acc = 0;
          for (std::size_t a = 0; a < d; ++a) acc += kf[a] * dh_i(a, b);
          dvt[b] += acc;
        }
      }
    }
  }

  return g;
}

}  // namespace sla
