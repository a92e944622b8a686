#include <benchmark/benchmark.h>

#include "sla/aggregation.hpp"
#include "sla/backward.hpp"
#include "sla/feature_map.hpp"
#include "sla/forward.hpp"
#include "sla/oracle.hpp"
#include "sla/rng.hpp"

using namespace sla;

namespace {

struct Fixture {
  BlockLayout layout;
  MatD q, k, v;
  CompressedMask mask;
  SlaConfig cfg;
};

Fixture make_fixture(std::size_t n, std::size_t d, double k_h, double k_l,
                     AggregationKind agg) {
  Fixture f{make_block_layout(n, d, 64, 64), {}, {}, {}, {}, {}};
  SplitMix64 rng(1);
  f.q = gaussian_mat(rng, n, d);
  f.k = gaussian_mat(rng, n, d);
  f.v = gaussian_mat(rng, n, d);
  f.cfg.k_h = k_h;
  f.cfg.k_l = k_l;
  f.cfg.aggregation = agg;
  f.cfg.dtype = Dtype::f64;
  f.mask = classify_mask(predict_compressed_weights(f.q, f.k, f.layout), k_h,
                         k_l);
  return f;
}

void bm_forward(benchmark::State& state) {
  const auto f = make_fixture(std::size_t(state.range(0)), 64, 5, 10,
                              AggregationKind::direct);
  for (auto _ : state) {
    auto out = sla_forward_with_mask(f.q, f.k, f.v, f.mask, f.cfg, f.layout);
    benchmark::DoNotOptimize(out.sparse_out.data.data());
  }
}
BENCHMARK(bm_forward)->Arg(1024)->Arg(2048)->Unit(benchmark::kMillisecond);

void bm_forward_vs_dense(benchmark::State& state) {
  const auto f = make_fixture(1024, 64, 5, 10, AggregationKind::direct);
  for (auto _ : state) {
    auto art = dense_attention_forward(f.q, f.k, f.v);
    benchmark::DoNotOptimize(art.o.data.data());
  }
}
BENCHMARK(bm_forward_vs_dense)->Unit(benchmark::kMillisecond);

void bm_backward(benchmark::State& state) {
  const auto f = make_fixture(1024, 64, 5, 10, AggregationKind::direct);
  const auto st = sla_forward_with_mask(f.q, f.k, f.v, f.mask, f.cfg, f.layout);
  SplitMix64 rng(2);
  const MatD dos = gaussian_mat(rng, 1024, 64), dol = gaussian_mat(rng, 1024, 64);
  for (auto _ : state) {
    auto g = sla_backward(st, f.q, f.k, f.v, dos, dol, f.cfg, f.layout);
    benchmark::DoNotOptimize(g.dv.data.data());
  }
}
BENCHMARK(bm_backward)->Unit(benchmark::kMillisecond);

void bm_aggregation(benchmark::State& state) {
  const auto kind = static_cast<AggregationKind>(state.range(0));
  SplitMix64 rng(3);
  const auto layout = make_block_layout(64 * 512, 64, 64, 64);  // T_n = 512
  MatD kf = gaussian_mat(rng, layout.n, 64);
  for (auto& x : kf.data) x = std::abs(x);
  const MatD v = gaussian_mat(rng, layout.n, 64);
  const auto sums = precompute_kv_summaries(kf, v, layout);
  const auto tables = build_four_russians_tables(sums, 4);

  std::vector<std::uint32_t> idx;  // half marginal, clustered
  for (std::uint32_t j = 128; j < 384; ++j) idx.push_back(j);

  MatD h;
  std::vector<double> z;
  for (auto _ : state) {
    aggregate_subset(sums, idx, kind,
                     kind == AggregationKind::four_russians ? &tables : nullptr,
                     h, z);
    benchmark::DoNotOptimize(h.data.data());
  }
}
BENCHMARK(bm_aggregation)
    ->Arg(int(AggregationKind::direct))
    ->Arg(int(AggregationKind::complement))
    ->Arg(int(AggregationKind::four_russians))
    ->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
