#include "sla/layout.hpp"

#include <stdexcept>
#include <string>

namespace sla {

BlockLayout make_block_layout(std::size_t n, std::size_t d, std::size_t b_q,
                              std::size_t b_kv) {
  if (n == 0 || d == 0 || b_q == 0 || b_kv == 0)
    throw std::invalid_argument("make_block_layout: all sizes must be positive");
  if (n % b_q != 0)
    throw std::invalid_argument("make_block_layout: b_q=" + std::to_string(b_q) +
                                " does not divide N=" + std::to_string(n));
  if (n % b_kv != 0)
    throw std::invalid_argument("make_block_layout: b_kv=" + std::to_string(b_kv) +
                                " does not divide N=" + std::to_string(n));
  BlockLayout layout;
  layout.n = n;
  layout.d = d;
  layout.b_q = b_q;
  layout.b_kv = b_kv;
  layout.t_m = n / b_q;
  layout.t_n = n / b_kv;
  return layout;
}

}  // namespace sla
