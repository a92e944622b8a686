#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sla/backward.hpp"
#include "sla/config.hpp"
#include "sla/forward.hpp"
#include "sla/layout.hpp"

namespace sla {

/// One attention layer with trainable input projections and output
/// projection, distilled against a frozen full-attention teacher that
/// shares the initial input projections. Training only has to close the
/// gap opened by sparsifying, which is what the projection is for.
struct ToyLayer {
  MatD wq, wk, wv;               // d_model x d
  OutputProjection<double> proj;  // d x d, starts at zero
  SlaConfig cfg;
};

struct FinetuneOptions {
  std::size_t steps = 200;
  double lr = 0.004;
  std::uint64_t seed = 0;
  bool freeze_mask = false;        // reuse the step-0 masks every step
  bool halve_lr_on_increase = false;  // revert + halve, at most 3 times
  bool spot_check_gradients = true;   // finite-difference check at step 0
  unsigned threads = 1;
};

struct FinetuneResult {
  std::vector<double> losses;  // losses[0] is the initial loss
  double initial_loss = 0;
  double final_loss = 0;
  std::size_t lr_halvings = 0;
  bool gradient_check_ran = false;
  double gradient_check_max_rel = 0;
  bool gradient_check_passed = true;
};

/// Plain gradient descent on the mean squared distillation loss
///   (1/batch) * sum_items 0.5 * ||O_sla - O_teacher||_F^2.
/// Masks are re-predicted from the current projections every step but are
/// constants inside each step's backward. Throws std::runtime_error when
/// the loss exceeds 10x its initial value.
FinetuneResult toy_finetune(const std::vector<MatD>& inputs,
                            const BlockLayout& layout, std::size_t d_model,
                            const SlaConfig& cfg, const FinetuneOptions& opt);

/// Fresh layer with seed-determined Gaussian input projections (scale
/// 1/sqrt(d_model)) and a zero output projection.
ToyLayer make_toy_layer(std::size_t d_model, std::size_t d,
                        const SlaConfig& cfg, std::uint64_t seed);

}  // namespace sla
