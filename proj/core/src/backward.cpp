#include "sla/backward.hpp"

#include <cmath>
#include <stdexcept>

#include "sla/detail/block_ops.hpp"
#include "sla/feature_map.hpp"
#include "sla/parallel.hpp"

namespace sla {

template <typename T>
std::tuple<Mat<T>, Mat<T>, Mat<T>> proj_backward(const Mat<T>& d_out,
                                                 const Mat<T>& linear_out,
                                                 const Mat<T>& w) {
  if (!d_out.same_shape(linear_out))
    throw std::invalid_argument("proj_backward: shape mismatch");
  Mat<T> d_out_sparse = d_out;
  Mat<T> d_out_linear = matmul_nt(d_out, w);
  Mat<T> dw = matmul_tn(linear_out, d_out);
  return {std::move(d_out_sparse), std::move(d_out_linear), std::move(dw)};
}

template <typename T>
SlaGradients<T> sla_backward(const SlaForwardState<T>& state, const Mat<T>& q,
                             const Mat<T>& k, const Mat<T>& v,
                             const Mat<T>& d_out_sparse,
                             const Mat<T>& d_out_linear, const SlaConfig& cfg,
                             const BlockLayout& layout, unsigned threads,
                             ExecCounters* counters) {
  const std::size_t n = layout.n, d = layout.d;
  const std::size_t bq = layout.b_q, bkv = layout.b_kv;
  if (state.row_h.size() != layout.t_m || state.row_lse.size() != n)
    throw std::invalid_argument("sla_backward: state does not match layout");
  if (d_out_sparse.rows != n || d_out_sparse.cols != d ||
      d_out_linear.rows != n || d_out_linear.cols != d)
    throw std::invalid_argument("sla_backward: cotangent shape mismatch");
  const CompressedMask& mask = state.mask;

  SlaGradients<T> g;
  g.dq = Mat<T>(n, d);
  g.dk = Mat<T>(n, d);
  g.dv = Mat<T>(n, d);
  g.dq_feat = Mat<T>(n, d);
  g.dk_feat = Mat<T>(n, d);
  g.dproj = matmul_tn(state.linear_out, d_out_sparse);

  // per-row D^s = <dO^s, O^s> and D^l = <dO^l, O^l>
  std::vector<T> d_sparse_row(n, T(0)), d_linear_row(n, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    T a = 0, b = 0;
    for (std::size_t c = 0; c < d; ++c) {
      a += d_out_sparse(r, c) * state.sparse_out(r, c);
      b += d_out_linear(r, c) * state.linear_out(r, c);
    }
    d_sparse_row[r] = a;
    d_linear_row[r] = b;
  }

  const unsigned workers = threads == 0 ? 1 : threads;
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  // Per-block-row gradient summaries (dH_i, dZ_i), aggregated per key
  // column below with the same strategies the forward uses.
  KvSummaries<T> grad_sums(layout.t_m, d);

  // --- block-row phase: dH_i, dZ_i, dQ^phi rows, sparse dQ rows ---
  parallel_for(0, layout.t_m, workers, [&](std::size_t i, std::size_t) {
    // linear path
    if (!mask.marginal_idx[i].empty()) {
      Mat<T>& dh_i = grad_sums.h[i];
      std::vector<T>& dz_i = grad_sums.z[i];
      const Mat<T>& h_i = state.row_h[i];
      const std::vector<T>& z_i = state.row_z[i];
      for (std::size_t r = i * bq; r < (i + 1) * bq; ++r) {
        const T* qf = state.q_feat.row(r);
        T den = 0;
        for (std::size_t a = 0; a < d; ++a) den += qf[a] * z_i[a];
        if (den == T(0)) continue;  // forward pinned this row to zero
        const T* go = d_out_linear.row(r);
        const T dl = d_linear_row[r];
        for (std::size_t a = 0; a < d; ++a) {
          const T qa = qf[a] / den;
          if (qa != T(0)) {
            T* dha = dh_i.row(a);
            for (std::size_t b = 0; b < d; ++b) dha[b] += qa * go[b];
            dz_i[a] -= qa * dl;
          }
          const T* ha = h_i.row(a);
          T acc = 0;
          for (std::size_t b = 0; b < d; ++b) acc += go[b] * ha[b];
          g.dq_feat(r, a) = (acc - dl * z_i[a]) / den;
        }
      }
    }

    // sparse path, dQ side
    if (!mask.critical_idx[i].empty()) {
      Mat<T> s(bq, bkv);
      for (const auto j : mask.critical_idx[i]) {
        detail::score_block(q, k, layout, i, j, s);
        const std::size_t c0 = std::size_t(j) * bkv;
        for (std::size_t r = 0; r < bq; ++r) {
          const std::size_t row = i * bq + r;
          const T* go = d_out_sparse.row(row);
          const T ds_base = d_sparse_row[row];
          T* dq_row = g.dq.row(row);
          for (std::size_t c = 0; c < bkv; ++c) {
            const T p = std::exp(s(r, c) - state.row_lse[row]);
            const T* vc = v.row(c0 + c);
            T dp = 0;
            for (std::size_t e = 0; e < d; ++e) dp += go[e] * vc[e];
            const T ds = p * (dp - ds_base) * inv_sqrt_d;
            const T* kc = k.row(c0 + c);
            for (std::size_t e = 0; e < d; ++e) dq_row[e] += ds * kc[e];
          }
        }
      }
    }
  });

  grad_sums.refresh_totals();

  const AggregationKind strategy =
      resolve_strategy(cfg.aggregation, mask.marginal_fraction(),
                       cfg.auto_direct_max, cfg.auto_complement_min);
  FourRussiansTables<T> tables;
  AggCounters table_counters;
  if (strategy == AggregationKind::four_russians)
    tables = build_four_russians_tables(grad_sums, cfg.group_size,
                                        &table_counters);

  // per-column critical row lists
  std::vector<std::vector<std::uint32_t>> critical_rows(layout.t_n);
  for (std::size_t i = 0; i < layout.t_m; ++i)
    for (const auto j : mask.critical_idx[i])
      critical_rows[j].push_back(std::uint32_t(i));

  std::vector<AggCounters> local_agg(workers);

  // --- block-column phase: dK, dV, dK^phi ---
  parallel_for(0, layout.t_n, workers, [&](std::size_t j, std::size_t w) {
    // sparse contributions first, ascending i
    if (!critical_rows[j].empty()) {
      Mat<T> s(bq, bkv);
      const std::size_t c0 = j * bkv;
      for (const auto i : critical_rows[j]) {
        detail::score_block(q, k, layout, i, j, s);
        for (std::size_t r = 0; r < bq; ++r) {
          const std::size_t row = std::size_t(i) * bq + r;
          const T* go = d_out_sparse.row(row);
          const T ds_base = d_sparse_row[row];
          const T* qr = q.row(row);
          for (std::size_t c = 0; c < bkv; ++c) {
            const T p = std::exp(s(r, c) - state.row_lse[row]);
            // dV_j += P^T dO^s
            T* dv_row = g.dv.row(c0 + c);
            for (std::size_t e = 0; e < d; ++e) dv_row[e] += p * go[e];
            const T* vc = v.row(c0 + c);
            T dp = 0;
            for (std::size_t e = 0; e < d; ++e) dp += go[e] * vc[e];
            const T ds = p * (dp - ds_base) * inv_sqrt_d;
            T* dk_row = g.dk.row(c0 + c);
            for (std::size_t e = 0; e < d; ++e) dk_row[e] += ds * qr[e];
          }
        }
      }
    }

    // linear contributions: aggregate dH_i / dZ_i over marginal rows
    const auto rows = mask.marginal_rows_of_column(j);
    if (!rows.empty()) {
      Mat<T> dh_agg(d, d);
      std::vector<T> dz_agg(d, T(0));
      aggregate_subset(grad_sums, rows, strategy,
                       strategy == AggregationKind::four_russians ? &tables
                                                                  : nullptr,
                       dh_agg, dz_agg, &local_agg[w]);
      std::vector<T> dv_lin(d);
      for (std::size_t t = j * bkv; t < (j + 1) * bkv; ++t) {
        const T* vt = v.row(t);
        const T* kf = state.k_feat.row(t);
        T* dkf = g.dk_feat.row(t);
        std::fill(dv_lin.begin(), dv_lin.end(), T(0));
        for (std::size_t a = 0; a < d; ++a) {
          const T* dha = dh_agg.row(a);
          T acc = 0;
          for (std::size_t b = 0; b < d; ++b) acc += vt[b] * dha[b];
          dkf[a] += acc + dz_agg[a];  // dZ adjoint broadcasts over tokens
          const T ka = kf[a];
          if (ka != T(0))
            for (std::size_t b = 0; b < d; ++b) dv_lin[b] += ka * dha[b];
        }
        // one add per entry so path contributions decompose exactly
        T* dvt = g.dv.row(t);
        for (std::size_t b = 0; b < d; ++b) dvt[b] += dv_lin[b];
      }
    }
  });

  if (counters) {
    for (const auto& ac : local_agg) {
      counters->aggregation.additions += ac.additions;
      counters->aggregation.subtractions += ac.subtractions;
      counters->aggregation.lookups += ac.lookups;
    }
    counters->aggregation.table_build_additions +=
        table_counters.table_build_additions;
  }

  g.dq_total = feature_map_vjp(q, cfg.phi, g.dq_feat);
  add_inplace(g.dq_total, g.dq);
  g.dk_total = feature_map_vjp(k, cfg.phi, g.dk_feat);
  add_inplace(g.dk_total, g.dk);
  return g;
}

#define SLA_INSTANTIATE_BACKWARD(T)                                          \
  template std::tuple<Mat<T>, Mat<T>, Mat<T>> proj_backward<T>(              \
      const Mat<T>&, const Mat<T>&, const Mat<T>&);                          \
  template SlaGradients<T> sla_backward<T>(                                  \
      const SlaForwardState<T>&, const Mat<T>&, const Mat<T>&, const Mat<T>&,\
      const Mat<T>&, const Mat<T>&, const SlaConfig&, const BlockLayout&,    \
      unsigned, ExecCounters*);

SLA_INSTANTIATE_BACKWARD(float)
SLA_INSTANTIATE_BACKWARD(double)
#undef SLA_INSTANTIATE_BACKWARD

}  // namespace sla
