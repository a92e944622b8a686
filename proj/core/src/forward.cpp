#include "sla/forward.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "sla/detail/block_ops.hpp"
#include "sla/feature_map.hpp"
#include "sla/parallel.hpp"

namespace sla {

namespace {

template <typename T>
void check_input(const Mat<T>& m, const BlockLayout& layout, const char* name) {
  if (m.rows != layout.n || m.cols != layout.d)
    throw std::invalid_argument(std::string("sla_forward: ") + name +
                                " must be N x d");
  if (auto bad = find_non_finite(m))
    throw std::invalid_argument(std::string("sla_forward: ") + name +
                                " has non-finite entry at (" +
                                std::to_string(bad->first) + ", " +
                                std::to_string(bad->second) + ")");
}

}  // namespace

template <typename T>
void sparse_block_row_forward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                              const BlockLayout& layout, std::size_t block_row,
                              const std::vector<std::uint32_t>& column_blocks,
                              Mat<T>& out, std::vector<T>& lse,
                              std::uint64_t* block_matmuls) {
  const std::size_t bq = layout.b_q, bkv = layout.b_kv, d = layout.d;
  const std::size_t r0 = block_row * bq;
  const T neg_inf = -std::numeric_limits<T>::infinity();

  std::vector<T> m_run(bq, neg_inf);  // running row max
  std::vector<T> l_run(bq, T(0));     // running normalizer
  Mat<T> acc(bq, d);
  Mat<T> s(bq, bkv);

  for (const auto j : column_blocks) {
    detail::score_block(q, k, layout, block_row, j, s);
    if (block_matmuls) ++*block_matmuls;
    const std::size_t c0 = std::size_t(j) * bkv;
    for (std::size_t r = 0; r < bq; ++r) {
      const T* sr = s.row(r);
      T row_max = sr[0];
      for (std::size_t c = 1; c < bkv; ++c) row_max = std::max(row_max, sr[c]);
      const T m_new = std::max(m_run[r], row_max);
      const T alpha = std::exp(m_run[r] - m_new);  // 0 on the first block
      T p_sum = 0;
      T* ar = acc.row(r);
      for (std::size_t e = 0; e < d; ++e) ar[e] *= alpha;
      for (std::size_t c = 0; c < bkv; ++c) {
        const T p = std::exp(sr[c] - m_new);
        p_sum += p;
        const T* vc = v.row(c0 + c);
        for (std::size_t e = 0; e < d; ++e) ar[e] += p * vc[e];
      }
      l_run[r] = alpha * l_run[r] + p_sum;
      m_run[r] = m_new;
    }
  }

  for (std::size_t r = 0; r < bq; ++r) {
    T* orow = out.row(r0 + r);
    if (l_run[r] == T(0)) {
      for (std::size_t e = 0; e < d; ++e) orow[e] = T(0);
      lse[r0 + r] = lse_sentinel<T>();
    } else {
      const T* ar = acc.row(r);
      for (std::size_t e = 0; e < d; ++e) orow[e] = ar[e] / l_run[r];
      lse[r0 + r] = m_run[r] + std::log(l_run[r]);
    }
  }
}

template <typename T>
SlaForwardState<T> sla_forward_with_mask(const Mat<T>& q, const Mat<T>& k,
                                         const Mat<T>& v,
                                         const CompressedMask& mask,
                                         const SlaConfig& cfg,
                                         const BlockLayout& layout,
                                         unsigned threads,
                                         ExecCounters* counters) {
  check_input(q, layout, "Q");
  check_input(k, layout, "K");
  check_input(v, layout, "V");
  if (mask.t_m != layout.t_m || mask.t_n != layout.t_n)
    throw std::invalid_argument("sla_forward: mask does not match layout");

  SlaForwardState<T> state;
  state.mask = mask;
  state.q_feat = apply_feature_map(q, cfg.phi);
  state.k_feat = apply_feature_map(k, cfg.phi);
  state.summaries = precompute_kv_summaries(state.k_feat, v, layout);
  state.sparse_out = Mat<T>(layout.n, layout.d);
  state.linear_out = Mat<T>(layout.n, layout.d);
  state.row_lse.assign(layout.n, lse_sentinel<T>());
  state.row_h.assign(layout.t_m, Mat<T>(layout.d, layout.d));
  state.row_z.assign(layout.t_m, std::vector<T>(layout.d, T(0)));

  const AggregationKind strategy =
      resolve_strategy(cfg.aggregation, mask.marginal_fraction(),
                       cfg.auto_direct_max, cfg.auto_complement_min);
  FourRussiansTables<T> tables;
  AggCounters table_counters;
  if (strategy == AggregationKind::four_russians)
    tables = build_four_russians_tables(state.summaries, cfg.group_size,
                                        &table_counters);

  const unsigned workers = threads == 0 ? 1 : threads;
  std::vector<ExecCounters> local(workers);

  parallel_for(0, layout.t_m, workers, [&](std::size_t i, std::size_t w) {
    ExecCounters& ec = local[w];
    sparse_block_row_forward(q, k, v, layout, i, mask.critical_idx[i],
                             state.sparse_out, state.row_lse,
                             &ec.sparse_block_matmuls);
    // each critical block is two block matmuls: scores and weight-value
    ec.sparse_block_matmuls += mask.critical_idx[i].size();

    aggregate_subset(state.summaries, mask.marginal_idx[i], strategy,
                     strategy == AggregationKind::four_russians ? &tables
                                                                : nullptr,
                     state.row_h[i], state.row_z[i], &ec.aggregation);

    if (!mask.marginal_idx[i].empty()) {
      const Mat<T>& h_i = state.row_h[i];
      const std::vector<T>& z_i = state.row_z[i];
      for (std::size_t r = i * layout.b_q; r < (i + 1) * layout.b_q; ++r) {
        const T* qf = state.q_feat.row(r);
        T den = 0;
        for (std::size_t a = 0; a < layout.d; ++a) den += qf[a] * z_i[a];
        if (den == T(0)) continue;  // relu can empty a row; keep it zero
        T* orow = state.linear_out.row(r);
        for (std::size_t a = 0; a < layout.d; ++a) {
          const T qa = qf[a];
          if (qa == T(0)) continue;
          const T* ha = h_i.row(a);
          for (std::size_t b = 0; b < layout.d; ++b) orow[b] += qa * ha[b];
        }
        for (std::size_t b = 0; b < layout.d; ++b) orow[b] /= den;
        ++ec.linear_row_products;
      }
    }
  });

  if (counters) {
    for (const auto& ec : local) {
      counters->sparse_block_matmuls += ec.sparse_block_matmuls;
      counters->linear_row_products += ec.linear_row_products;
      counters->aggregation.additions += ec.aggregation.additions;
      counters->aggregation.subtractions += ec.aggregation.subtractions;
      counters->aggregation.lookups += ec.aggregation.lookups;
    }
    counters->aggregation.table_build_additions +=
        table_counters.table_build_additions;
  }

  for (const Mat<T>* out : {&state.sparse_out, &state.linear_out}) {
    if (auto bad = find_non_finite(*out))
      throw std::runtime_error(
          "sla_forward: non-finite output at row " +
          std::to_string(bad->first) + ", col " + std::to_string(bad->second) +
          " (block row " + std::to_string(bad->first / layout.b_q) + ")");
  }
  return state;
}

template <typename T>
SlaForwardState<T> sla_forward(const Mat<T>& q, const Mat<T>& k,
                               const Mat<T>& v, const SlaConfig& cfg,
                               const BlockLayout& layout, unsigned threads,
                               ExecCounters* counters) {
  validate_config(cfg);
  // dynamic mask: re-predicted from the current Q, K on every call
  const CompressedWeights weights = predict_compressed_weights(
      cast_mat<double>(q), cast_mat<double>(k), layout);
  const CompressedMask mask = classify_mask(weights, cfg.k_h, cfg.k_l);
  return sla_forward_with_mask(q, k, v, mask, cfg, layout, threads, counters);
}

template <typename T>
Mat<T> combine_outputs(const SlaForwardState<T>& state,
                       const OutputProjection<T>& proj) {
  if (proj.w.rows != state.linear_out.cols || proj.w.cols != proj.w.rows)
    throw std::invalid_argument("combine_outputs: W must be d x d");
  Mat<T> out = matmul(state.linear_out, proj.w);
  add_inplace(out, state.sparse_out);
  return out;
}

#define SLA_INSTANTIATE_FORWARD(T)                                           \
  template void sparse_block_row_forward<T>(                                 \
      const Mat<T>&, const Mat<T>&, const Mat<T>&, const BlockLayout&,       \
      std::size_t, const std::vector<std::uint32_t>&, Mat<T>&,               \
      std::vector<T>&, std::uint64_t*);                                      \
  template SlaForwardState<T> sla_forward_with_mask<T>(                      \
      const Mat<T>&, const Mat<T>&, const Mat<T>&, const CompressedMask&,    \
      const SlaConfig&, const BlockLayout&, unsigned, ExecCounters*);        \
  template SlaForwardState<T> sla_forward<T>(const Mat<T>&, const Mat<T>&,   \
                                             const Mat<T>&, const SlaConfig&,\
                                             const BlockLayout&, unsigned,   \
                                             ExecCounters*);                 \
  template Mat<T> combine_outputs<T>(const SlaForwardState<T>&,              \
                                     const OutputProjection<T>&);

SLA_INSTANTIATE_FORWARD(float)
SLA_INSTANTIATE_FORWARD(double)
#undef SLA_INSTANTIATE_FORWARD

}  // namespace sla
