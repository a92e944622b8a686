#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "sla/flops.hpp"
#include "sla/layout.hpp"
#include "sla/tensor_io.hpp"
#include "test_support.hpp"

using namespace sla;

TEST_CASE("block layout divides the sequence exactly") {
  auto layout = make_block_layout(256, 16, 16, 16);
  CHECK(layout.t_m == 16);
  CHECK(layout.t_n == 16);

  auto single = make_block_layout(64, 8, 64, 64);
  CHECK(single.t_m == 1);
  CHECK(single.t_n == 1);

  CHECK_THROWS_AS(make_block_layout(100, 8, 16, 16), std::invalid_argument);
  CHECK_THROWS_AS(make_block_layout(100, 8, 10, 16), std::invalid_argument);
  CHECK_THROWS_AS(make_block_layout(0, 8, 16, 16), std::invalid_argument);
}

TEST_CASE("tensor file round-trip is bit-exact") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "sla_tensor_io_test";
  fs::create_directories(dir);

  SplitMix64 rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t rows = 1 + rng.next() % 17, cols = 1 + rng.next() % 9;
    MatD md = gaussian_mat(rng, rows, cols, 1e3);
    const auto prefix = (dir / ("t" + std::to_string(trial))).string();

    save_tensor(Tensor(md), prefix);
    const Tensor back = load_tensor(prefix);
    REQUIRE(back.dtype() == Dtype::f64);
    for (std::size_t e = 0; e < md.data.size(); ++e)
      CHECK(back.f64().data[e] == md.data[e]);

    MatF mf = cast_mat<float>(md);
    save_tensor(Tensor(mf), prefix);
    const Tensor backf = load_tensor(prefix);
    REQUIRE(backf.dtype() == Dtype::f32);
    for (std::size_t e = 0; e < mf.data.size(); ++e)
      CHECK(backf.f32().data[e] == mf.data[e]);
  }
  fs::remove_all(dir);
}

TEST_CASE("tensor construction rejects non-finite entries") {
  MatD m(2, 2);
  m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Tensor{m}, std::invalid_argument);
  CHECK_NOTHROW(Tensor(m, /*allow_non_finite=*/true));
}

namespace {

// Independent flop count: walk the mask block by block and sum the
// documented per-block costs.
std::uint64_t enumerate_sla_flops(const BlockLayout& L,
                                  const CompressedMask& mask) {
  std::uint64_t total = 0;
  bool any_marginal = false;
  for (std::size_t i = 0; i < mask.t_m; ++i) {
    bool row_marginal = false;
    for (std::size_t j = 0; j < mask.t_n; ++j) {
      if (mask.label(i, j) == 1) total += 4 * L.b_q * L.b_kv * L.d;
      if (mask.label(i, j) == 0) row_marginal = true;
    }
    if (row_marginal) total += 2 * L.b_q * L.d * L.d;
    any_marginal |= row_marginal;
  }
  if (any_marginal) total += L.n * L.d;              // z + normalization
  total += 2 * L.n * L.d * L.d;                      // projection
  total += 2 * L.n * L.d + 2 * L.t_m * L.t_n * L.d;  // mask prediction
  return total;
}

}  // namespace

TEST_CASE("flops report matches a per-block enumerator") {
  const auto layout = make_block_layout(1024, 32, 32, 32);
  SplitMix64 rng(7);
  // rho1 = 0.25, rho0 = 0.5
  auto mask = testing::random_mask(rng, layout.t_m, layout.t_n, 0.25, 0.5);
  const auto report = flops_report(layout, mask);
  CHECK(report.sla_total == enumerate_sla_flops(layout, mask));
  CHECK(report.sla_total == report.sparse_flops + report.linear_flops +
                                report.proj_flops + report.mask_flops);
}

TEST_CASE("flops ratio at the published operating point") {
  const auto layout = make_block_layout(32768, 128, 64, 64);
  SplitMix64 rng(3);
  CompressedWeights w{uniform_mat(rng, layout.t_m, layout.t_n, 0.0, 1.0)};
  const auto mask = classify_mask(w, 5.0, 10.0);
  const auto report = flops_report(layout, mask);
  CHECK(report.ratio >= 0.050);
  CHECK(report.ratio <= 0.055);
  CHECK(report.sparsity == doctest::Approx(0.95).epsilon(1e-3));
}

TEST_CASE("all-critical mask costs at least full attention") {
  const auto layout = make_block_layout(256, 16, 16, 16);
  std::vector<std::int8_t> labels(layout.t_m * layout.t_n, 1);
  const auto mask = build_lookup(layout.t_m, layout.t_n, std::move(labels));
  const auto report = flops_report(layout, mask);
  CHECK(report.ratio >= 1.0);
  CHECK(report.sparsity == 0.0);
  CHECK(report.linear_flops == 0);
}

TEST_CASE("all-negligible mask leaves only projection and mask flops") {
  const auto layout = make_block_layout(256, 16, 16, 16);
  std::vector<std::int8_t> labels(layout.t_m * layout.t_n, -1);
  const auto mask = build_lookup(layout.t_m, layout.t_n, std::move(labels));
  const auto report = flops_report(layout, mask);
  CHECK(report.sla_total == report.proj_flops + report.mask_flops);
}

TEST_CASE("flops ratio is monotone as negligible blocks become critical") {
  const auto layout = make_block_layout(512, 16, 32, 32);
  SplitMix64 rng(11);
  // marginal set held fixed; critical grows out of the negligible pool
  auto labels_of = [&](double p1) {
    SplitMix64 local(11);
    std::vector<std::int8_t> labels(layout.t_m * layout.t_n);
    for (auto& l : labels) {
      const double u = local.uniform();
      l = u < p1 ? 1 : (u >= 0.5 && u < 0.75 ? 0 : -1);
    }
    return labels;
  };
  double prev = -1;
  for (double p1 : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) {
    const auto mask = build_lookup(layout.t_m, layout.t_n, labels_of(p1));
    const auto report = flops_report(layout, mask);
    CHECK(report.ratio >= prev);
    prev = report.ratio;
  }
}
