#include "sla/flops.hpp"

#include <stdexcept>

namespace sla {

FlopsReport flops_report(const BlockLayout& layout, const CompressedMask& mask) {
  if (mask.t_m != layout.t_m || mask.t_n != layout.t_n)
    throw std::invalid_argument("flops_report: mask does not match layout");

  const std::uint64_t n = layout.n;
  const std::uint64_t d = layout.d;

  FlopsReport r;
  r.full_flops = 4 * n * n * d;

  const std::uint64_t critical_blocks = mask.total_critical();
  r.sparse_flops = 4 * layout.b_q * layout.b_kv * d * critical_blocks;

  std::uint64_t covered_rows = 0;
  for (std::size_t i = 0; i < mask.t_m; ++i)
    if (mask.counts[i].marginal > 0) covered_rows += layout.b_q;
  const bool linear_active = mask.total_marginal() > 0;
  r.linear_flops = 2 * covered_rows * d * d + (linear_active ? n * d : 0);

  r.proj_flops = 2 * n * d * d;
  r.mask_flops = 2 * n * d + 2 * std::uint64_t(layout.t_m) * layout.t_n * d;

  r.sla_total = r.sparse_flops + r.linear_flops + r.proj_flops + r.mask_flops;
  r.ratio = double(r.sla_total) / double(r.full_flops);
  r.sparsity = 1.0 - mask.critical_fraction();
  return r;
}

}  // namespace sla
