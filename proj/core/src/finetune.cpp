#include "sla/finetune.hpp"

#include <cmath>
#include <stdexcept>

#include "sla/oracle.hpp"
#include "sla/rng.hpp"

namespace sla {

namespace {

struct ParamGrads {
  MatD dwq, dwk, dwv, dw;
};

struct BatchEval {
  double loss = 0;
  ParamGrads grads;
};

/// Loss and parameter gradients across the batch with the given per-item
/// masks held fixed.
BatchEval eval_batch(const ToyLayer& layer, const std::vector<MatD>& inputs,
                     const std::vector<MatD>& teacher,
                     const std::vector<CompressedMask>& masks,
                     const BlockLayout& layout, unsigned threads,
                     bool want_grads) {
  const std::size_t d_model = layer.wq.rows, d = layer.wq.cols;
  BatchEval ev;
  if (want_grads) {
    ev.grads.dwq = MatD(d_model, d);
    ev.grads.dwk = MatD(d_model, d);
    ev.grads.dwv = MatD(d_model, d);
    ev.grads.dw = MatD(d, d);
  }
  const double inv_batch = 1.0 / double(inputs.size());

  for (std::size_t item = 0; item < inputs.size(); ++item) {
    const MatD& x = inputs[item];
    const MatD q = matmul(x, layer.wq);
    const MatD k = matmul(x, layer.wk);
    const MatD v = matmul(x, layer.wv);
    const auto state = sla_forward_with_mask(q, k, v, masks[item], layer.cfg,
                                             layout, threads);
    const MatD out = combine_outputs(state, layer.proj);

    MatD d_out(out.rows, out.cols);
    double item_loss = 0;
    for (std::size_t e = 0; e < out.data.size(); ++e) {
      const double diff = out.data[e] - teacher[item].data[e];
      item_loss += 0.5 * diff * diff;
      d_out.data[e] = diff * inv_batch;
    }
    ev.loss += item_loss * inv_batch;
    if (!want_grads) continue;

    auto [d_out_sparse, d_out_linear, dw] =
        proj_backward(d_out, state.linear_out, layer.proj.w);
    const auto grads = sla_backward(state, q, k, v, d_out_sparse, d_out_linear,
                                    layer.cfg, layout, threads);
    add_inplace(ev.grads.dw, dw);
    add_inplace(ev.grads.dwq, matmul_tn(x, grads.dq_total));
    add_inplace(ev.grads.dwk, matmul_tn(x, grads.dk_total));
    add_inplace(ev.grads.dwv, matmul_tn(x, grads.dv));
  }
  return ev;
}

std::vector<CompressedMask> masks_for(const ToyLayer& layer,
                                      const std::vector<MatD>& inputs,
                                      const BlockLayout& layout) {
  std::vector<CompressedMask> masks;
  masks.reserve(inputs.size());
  for (const auto& x : inputs) {
    const MatD q = matmul(x, layer.wq);
    const MatD k = matmul(x, layer.wk);
    masks.push_back(
        classify_mask(predict_compressed_weights(q, k, layout), layer.cfg.k_h,
                      layer.cfg.k_l));
  }
  return masks;
}

void apply_step(ToyLayer& layer, const ParamGrads& g, double lr) {
  for (std::size_t e = 0; e < layer.wq.data.size(); ++e) {
    layer.wq.data[e] -= lr * g.dwq.data[e];
    layer.wk.data[e] -= lr * g.dwk.data[e];
    layer.wv.data[e] -= lr * g.dwv.data[e];
  }
  for (std::size_t e = 0; e < layer.proj.w.data.size(); ++e)
    layer.proj.w.data[e] -= lr * g.dw.data[e];
}

/// Central finite differences of the batch loss at a sample of parameter
/// coordinates, against the analytic gradient. Masks stay fixed.
double spot_check(const ToyLayer& layer, const std::vector<MatD>& inputs,
                  const std::vector<MatD>& teacher,
                  const std::vector<CompressedMask>& masks,
                  const BlockLayout& layout, const ParamGrads& analytic,
                  unsigned threads, std::uint64_t seed) {
  SplitMix64 rng(seed ^ 0xfd1f0cabULL);
  const double h = 1e-5;
  double max_rel = 0;

  auto probe = [&](auto select, const MatD& grad) {
    for (int trial = 0; trial < 4; ++trial) {
      ToyLayer probe_layer = layer;
      MatD& target = select(probe_layer);
      const std::size_t e = std::size_t(rng.next() % target.data.size());
      const double saved = target.data[e];
      target.data[e] = saved + h;
      const double up =
          eval_batch(probe_layer, inputs, teacher, masks, layout, threads, false)
              .loss;
      target.data[e] = saved - h;
      const double down =
          eval_batch(probe_layer, inputs, teacher, masks, layout, threads, false)
              .loss;
      const double fd = (up - down) / (2 * h);
      const double rel =
          std::abs(grad.data[e] - fd) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  };
  probe([](ToyLayer& l) -> MatD& { return l.wq; }, analytic.dwq);
  probe([](ToyLayer& l) -> MatD& { return l.wk; }, analytic.dwk);
  probe([](ToyLayer& l) -> MatD& { return l.wv; }, analytic.dwv);
  probe([](ToyLayer& l) -> MatD& { return l.proj.w; }, analytic.dw);
  return max_rel;
}

}  // namespace

ToyLayer make_toy_layer(std::size_t d_model, std::size_t d,
                        const SlaConfig& cfg, std::uint64_t seed) {
  SplitMix64 rng(seed);
  ToyLayer layer;
  const double scale = 1.0 / std::sqrt(double(d_model));
  layer.wq = gaussian_mat(rng, d_model, d, scale);
  layer.wk = gaussian_mat(rng, d_model, d, scale);
  layer.wv = gaussian_mat(rng, d_model, d, scale);
  layer.proj.w = MatD(d, d);
  layer.cfg = cfg;
  return layer;
}

FinetuneResult toy_finetune(const std::vector<MatD>& inputs,
                            const BlockLayout& layout, std::size_t d_model,
                            const SlaConfig& cfg, const FinetuneOptions& opt) {
  if (opt.steps < 1)
    throw std::invalid_argument("toy_finetune: steps must be >= 1");
  if (inputs.empty())
    throw std::invalid_argument("toy_finetune: need at least one input");
  for (const auto& x : inputs)
    if (x.rows != layout.n || x.cols != d_model)
      throw std::invalid_argument("toy_finetune: inputs must be N x d_model");

  ToyLayer layer = make_toy_layer(d_model, layout.d, cfg, opt.seed);

  // frozen teacher: full attention on the initial projections
  std::vector<MatD> teacher;
  teacher.reserve(inputs.size());
  for (const auto& x : inputs)
    teacher.push_back(dense_attention_forward(matmul(x, layer.wq),
                                              matmul(x, layer.wk),
                                              matmul(x, layer.wv))
                          .o);

  FinetuneResult result;
  double lr = opt.lr;
  auto masks = masks_for(layer, inputs, layout);
  BatchEval ev =
      eval_batch(layer, inputs, teacher, masks, layout, opt.threads, true);
  result.initial_loss = ev.loss;
  result.losses.push_back(ev.loss);

  if (opt.spot_check_gradients) {
    result.gradient_check_ran = true;
    result.gradient_check_max_rel = spot_check(
        layer, inputs, teacher, masks, layout, ev.grads, opt.threads, opt.seed);
    result.gradient_check_passed = result.gradient_check_max_rel <= 1e-5;
  }

  for (std::size_t step = 0; step < opt.steps; ++step) {
    const ToyLayer before = layer;
    apply_step(layer, ev.grads, lr);
    if (!opt.freeze_mask) masks = masks_for(layer, inputs, layout);
    BatchEval next =
        eval_batch(layer, inputs, teacher, masks, layout, opt.threads, true);

    if (opt.halve_lr_on_increase && next.loss > result.losses.back() &&
        result.lr_halvings < 3) {
      // revert; ev (params, masks, grads) is still the pre-step state
      layer = before;
      lr *= 0.5;
      ++result.lr_halvings;
      result.losses.push_back(result.losses.back());
      continue;
    }

    ev = std::move(next);
    result.losses.push_back(ev.loss);
    if (ev.loss > 10.0 * result.initial_loss)
      throw std::runtime_error(
          "toy_finetune diverged at step " + std::to_string(step) + ": loss " +
          std::to_string(ev.loss) + " vs initial " +
          std::to_string(result.initial_loss) + " (lr " + std::to_string(lr) +
          ")");
  }
  result.final_loss = result.losses.back();
  return result;
}

}  // namespace sla
