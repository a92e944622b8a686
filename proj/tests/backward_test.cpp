#include "doctest.h"
#include "sla/backward.hpp"
#include "sla/feature_map.hpp"
#include "sla/oracle.hpp"
#include "test_support.hpp"

using namespace sla;

namespace {

SlaConfig f64_config(FeatureMapKind phi = FeatureMapKind::elu1) {
  SlaConfig cfg;
  cfg.phi = phi;
  cfg.dtype = Dtype::f64;
  return cfg;
}

}  // namespace

TEST_CASE("projection backward") {
  SplitMix64 rng(50);
  MatD d_out = gaussian_mat(rng, 12, 4), o_l = gaussian_mat(rng, 12, 4);

  SUBCASE("zero projection blocks the linear cotangent") {
    auto [ds, dl, dw] = proj_backward(d_out, o_l, MatD(4, 4));
    CHECK(rel_diff(ds, d_out) == 0.0);
    CHECK(max_abs(dl) == 0.0);
    CHECK(rel_diff(dw, matmul_tn(o_l, d_out)) <= 1e-15);
  }

  SUBCASE("identity projection passes it through") {
    MatD eye(4, 4);
    for (int i = 0; i < 4; ++i) eye(i, i) = 1.0;
    auto [ds, dl, dw] = proj_backward(d_out, o_l, eye);
    CHECK(rel_diff(dl, d_out) == 0.0);
  }

  SUBCASE("matches finite differences of the combination") {
    MatD w = gaussian_mat(rng, 4, 4);
    MatD o_s = gaussian_mat(rng, 12, 4);
    MatD cot = gaussian_mat(rng, 12, 4);
    auto [ds, dl, dw] = proj_backward(cot, o_l, w);
    auto loss = [&] {
      const MatD out = add(o_s, matmul(o_l, w));
      double acc = 0;
      for (std::size_t e = 0; e < out.data.size(); ++e)
        acc += cot.data[e] * out.data[e];
      return acc;
    };
    for (std::size_t e = 0; e < w.data.size(); ++e)
      CHECK(testing::rel_scalar(dw.data[e], testing::fd_entry(w, e, loss)) <=
            1e-7);
    for (std::size_t e = 0; e < o_l.data.size(); e += 5)
      CHECK(testing::rel_scalar(dl.data[e], testing::fd_entry(o_l, e, loss)) <=
            1e-7);
  }
}

TEST_CASE("zero cotangents give zero gradients") {
  const auto layout = make_block_layout(32, 4, 8, 8);
  SplitMix64 rng(51);
  MatD q = gaussian_mat(rng, 32, 4), k = gaussian_mat(rng, 32, 4),
       v = gaussian_mat(rng, 32, 4);
  const auto mask = testing::random_mask(rng, 4, 4);
  const auto cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);
  MatD zero(32, 4);
  const auto g = sla_backward(state, q, k, v, zero, zero, cfg, layout);
  CHECK(max_abs(g.dq_total) == 0.0);
  CHECK(max_abs(g.dk_total) == 0.0);
  CHECK(max_abs(g.dv) == 0.0);
  CHECK(max_abs(g.dproj) == 0.0);
}

TEST_CASE("all-critical backward matches the dense full-attention backward") {
  const auto layout = make_block_layout(64, 8, 16, 16);
  SplitMix64 rng(52);
  MatD q = gaussian_mat(rng, 64, 8), k = gaussian_mat(rng, 64, 8),
       v = gaussian_mat(rng, 64, 8);
  const auto mask =
      build_lookup(4, 4, std::vector<std::int8_t>(16, std::int8_t(1)));
  const auto cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);

  MatD dos = gaussian_mat(rng, 64, 8);
  MatD zero(64, 8);
  const auto g = sla_backward(state, q, k, v, dos, zero, cfg, layout);
  const auto ref = dense_backward(q, k, v, state.q_feat, state.k_feat, mask,
                                  layout, dos, zero);
  CHECK(rel_diff(g.dq, ref.dq) <= 1e-10);
  CHECK(rel_diff(g.dk, ref.dk) <= 1e-10);
  CHECK(rel_diff(g.dv, ref.dv) <= 1e-10);
}

TEST_CASE("mixed-mask gradients match the dense oracle for every feature map") {
  for (auto phi : {FeatureMapKind::elu1, FeatureMapKind::relu,
                   FeatureMapKind::feat_softmax}) {
    const auto layout = make_block_layout(64, 8, 16, 16);
    SplitMix64 rng(53 + int(phi));
    MatD q = gaussian_mat(rng, 64, 8), k = gaussian_mat(rng, 64, 8),
         v = gaussian_mat(rng, 64, 8);
    const auto mask = testing::random_mask(rng, 4, 4);
    const auto cfg = f64_config(phi);
    const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);

    MatD dos = gaussian_mat(rng, 64, 8), dol = gaussian_mat(rng, 64, 8);
    const auto g = sla_backward(state, q, k, v, dos, dol, cfg, layout);
    const auto ref = dense_backward(q, k, v, state.q_feat, state.k_feat, mask,
                                    layout, dos, dol);
    CHECK(rel_diff(g.dq, ref.dq) <= 1e-10);
    CHECK(rel_diff(g.dk, ref.dk) <= 1e-10);
    CHECK(rel_diff(g.dv, ref.dv) <= 1e-10);
    CHECK(rel_diff(g.dq_feat, ref.dq_feat) <= 1e-10);
    CHECK(rel_diff(g.dk_feat, ref.dk_feat) <= 1e-10);

    // composed totals against the vjp of the oracle's feature gradients
    MatD want_dq = add(ref.dq, feature_map_vjp(q, phi, ref.dq_feat));
    MatD want_dk = add(ref.dk, feature_map_vjp(k, phi, ref.dk_feat));
    CHECK(rel_diff(g.dq_total, want_dq) <= 1e-10);
    CHECK(rel_diff(g.dk_total, want_dk) <= 1e-10);
  }
}

TEST_CASE("end-to-end gradients pass finite differences") {
  const auto layout = make_block_layout(64, 8, 16, 16);
  SplitMix64 rng(54);
  MatD q = gaussian_mat(rng, 64, 8), k = gaussian_mat(rng, 64, 8),
       v = gaussian_mat(rng, 64, 8);
  MatD w = gaussian_mat(rng, 8, 8, 0.5);
  const auto mask = testing::random_mask(rng, 4, 4);
  const auto cfg = f64_config();

  auto loss = [&] {
    const auto st = sla_forward_with_mask(q, k, v, mask, cfg, layout);
    const auto out = combine_outputs(st, OutputProjection<double>{w});
    double acc = 0;
    for (double x : out.data) acc += 0.5 * x * x;
    return acc;
  };

  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);
  const auto out = combine_outputs(state, OutputProjection<double>{w});
  auto [dos, dol, dw] = proj_backward(out, state.linear_out, w);
  const auto g = sla_backward(state, q, k, v, dos, dol, cfg, layout);
  CHECK(rel_diff(g.dproj, dw) <= 1e-12);

  struct Case {
    MatD* tensor;
    const MatD* grad;
  };
  for (auto [tensor, grad] : {Case{&q, &g.dq_total}, Case{&k, &g.dk_total},
                              Case{&v, &g.dv}, Case{&w, &dw}}) {
    for (std::size_t e = 0; e < tensor->data.size(); e += 7) {
      const double fd = testing::fd_entry(*tensor, e, loss);
      CHECK(testing::rel_scalar(grad->data[e], fd) <= 1e-5);
    }
  }
}

TEST_CASE("backward is linear in the cotangents") {
  const auto layout = make_block_layout(32, 4, 8, 8);
  SplitMix64 rng(55);
  MatD q = gaussian_mat(rng, 32, 4), k = gaussian_mat(rng, 32, 4),
       v = gaussian_mat(rng, 32, 4);
  const auto mask = testing::random_mask(rng, 4, 4);
  const auto cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);

  MatD a_s = gaussian_mat(rng, 32, 4), a_l = gaussian_mat(rng, 32, 4);
  MatD b_s = gaussian_mat(rng, 32, 4), b_l = gaussian_mat(rng, 32, 4);
  const double ca = 0.7, cb = -1.3;
  MatD mix_s(32, 4), mix_l(32, 4);
  for (std::size_t e = 0; e < a_s.data.size(); ++e) {
    mix_s.data[e] = ca * a_s.data[e] + cb * b_s.data[e];
    mix_l.data[e] = ca * a_l.data[e] + cb * b_l.data[e];
  }

  const auto ga = sla_backward(state, q, k, v, a_s, a_l, cfg, layout);
  const auto gb = sla_backward(state, q, k, v, b_s, b_l, cfg, layout);
  const auto gm = sla_backward(state, q, k, v, mix_s, mix_l, cfg, layout);

  auto check_linear = [&](const MatD& ma, const MatD& mb, const MatD& mm) {
    for (std::size_t e = 0; e < ma.data.size(); ++e)
      CHECK(std::abs(mm.data[e] - (ca * ma.data[e] + cb * mb.data[e])) <=
            1e-12 * std::max(1.0, std::abs(mm.data[e])));
  };
  check_linear(ga.dq_total, gb.dq_total, gm.dq_total);
  check_linear(ga.dk_total, gb.dk_total, gm.dk_total);
  check_linear(ga.dv, gb.dv, gm.dv);
}

TEST_CASE("negligible blocks are invisible to outputs and gradients") {
  const auto layout = make_block_layout(32, 4, 8, 8);
  SplitMix64 rng(56);
  MatD q = gaussian_mat(rng, 32, 4), k = gaussian_mat(rng, 32, 4),
       v = gaussian_mat(rng, 32, 4);
  const auto mask = testing::random_mask(rng, 4, 4, 0.4, 0.3);
  const auto cfg = f64_config();
  MatD dos = gaussian_mat(rng, 32, 4), dol = gaussian_mat(rng, 32, 4);

  const auto base_state = sla_forward_with_mask(q, k, v, mask, cfg, layout);
  const auto base_grad =
      sla_backward(base_state, q, k, v, dos, dol, cfg, layout);

  // perturb K rows inside columns that are negligible for every block row
  MatD k_mod = k;
  bool touched = false;
  for (std::size_t j = 0; j < 4; ++j) {
    bool all_negligible = true;
    for (std::size_t i = 0; i < 4; ++i)
      all_negligible &= mask.label(i, j) == -1;
    if (!all_negligible) continue;
    touched = true;
    for (std::size_t t = j * 8; t < (j + 1) * 8; ++t)
      for (std::size_t c = 0; c < 4; ++c) k_mod(t, c) += 3.0;
  }
  if (!touched) return;  // mask draw had no fully negligible column

  const auto mod_state = sla_forward_with_mask(q, k_mod, v, mask, cfg, layout);
  const auto mod_grad =
      sla_backward(mod_state, q, k_mod, v, dos, dol, cfg, layout);
  CHECK(base_state.sparse_out.data == mod_state.sparse_out.data);
  CHECK(base_state.linear_out.data == mod_state.linear_out.data);
  CHECK(base_grad.dq.data == mod_grad.dq.data);
  CHECK(base_grad.dv.data == mod_grad.dv.data);
}

TEST_CASE("dV accumulates both paths") {
  const auto layout = make_block_layout(32, 4, 8, 8);
  SplitMix64 rng(57);
  MatD q = gaussian_mat(rng, 32, 4), k = gaussian_mat(rng, 32, 4),
       v = gaussian_mat(rng, 32, 4);
  const auto mask = testing::random_mask(rng, 4, 4);
  const auto cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);

  MatD dos = gaussian_mat(rng, 32, 4), dol = gaussian_mat(rng, 32, 4);
  MatD zero(32, 4);
  const auto both = sla_backward(state, q, k, v, dos, dol, cfg, layout);
  const auto sparse_only = sla_backward(state, q, k, v, dos, zero, cfg, layout);
  const auto linear_only = sla_backward(state, q, k, v, zero, dol, cfg, layout);
  for (std::size_t e = 0; e < v.data.size(); ++e)
    CHECK(both.dv.data[e] ==
          sparse_only.dv.data[e] + linear_only.dv.data[e]);
}

TEST_CASE("relu rows with zero denominators stay constant-zero branches") {
  const auto layout = make_block_layout(16, 4, 4, 4);
  SplitMix64 rng(58);
  // negative Q rows wipe phi(Q) under relu -> zero denominators
  MatD q = gaussian_mat(rng, 16, 4);
  for (std::size_t c = 0; c < 4; ++c) q(2, c) = -std::abs(q(2, c)) - 0.5;
  MatD k = gaussian_mat(rng, 16, 4), v = gaussian_mat(rng, 16, 4);
  const auto mask =
      build_lookup(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const auto cfg = f64_config(FeatureMapKind::relu);
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);
  for (std::size_t c = 0; c < 4; ++c) CHECK(state.linear_out(2, c) == 0.0);

  MatD dol = gaussian_mat(rng, 16, 4);
  MatD zero(16, 4);
  const auto g = sla_backward(state, q, k, v, zero, dol, cfg, layout);
  for (std::size_t c = 0; c < 4; ++c) CHECK(g.dq_feat(2, c) == 0.0);
}

TEST_CASE("backward aggregation strategies agree") {
  const auto layout = make_block_layout(128, 8, 16, 16);
  SplitMix64 rng(59);
  MatD q = gaussian_mat(rng, 128, 8), k = gaussian_mat(rng, 128, 8),
       v = gaussian_mat(rng, 128, 8);
  const auto mask = testing::random_mask(rng, 8, 8);
  MatD dos = gaussian_mat(rng, 128, 8), dol = gaussian_mat(rng, 128, 8);

  SlaConfig cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);

  cfg.aggregation = AggregationKind::direct;
  const auto gd = sla_backward(state, q, k, v, dos, dol, cfg, layout);
  cfg.aggregation = AggregationKind::complement;
  const auto gc = sla_backward(state, q, k, v, dos, dol, cfg, layout);
  cfg.aggregation = AggregationKind::four_russians;
  cfg.group_size = 3;
  const auto gf = sla_backward(state, q, k, v, dos, dol, cfg, layout);

  CHECK(rel_diff(gc.dk_feat, gd.dk_feat) <= 1e-10);
  CHECK(rel_diff(gf.dk_feat, gd.dk_feat) <= 1e-10);
  CHECK(rel_diff(gc.dv, gd.dv) <= 1e-10);
  CHECK(rel_diff(gf.dv, gd.dv) <= 1e-10);
}

TEST_CASE("thread count does not change gradients") {
  const auto layout = make_block_layout(64, 8, 16, 16);
  SplitMix64 rng(60);
  MatD q = gaussian_mat(rng, 64, 8), k = gaussian_mat(rng, 64, 8),
       v = gaussian_mat(rng, 64, 8);
  const auto mask = testing::random_mask(rng, 4, 4);
  const auto cfg = f64_config();
  const auto state = sla_forward_with_mask(q, k, v, mask, cfg, layout);
  MatD dos = gaussian_mat(rng, 64, 8), dol = gaussian_mat(rng, 64, 8);
  const auto one = sla_backward(state, q, k, v, dos, dol, cfg, layout, 1);
  const auto four = sla_backward(state, q, k, v, dos, dol, cfg, layout, 4);
  CHECK(one.dq_total.data == four.dq_total.data);
  CHECK(one.dk_total.data == four.dk_total.data);
  CHECK(one.dv.data == four.dv.data);
}
