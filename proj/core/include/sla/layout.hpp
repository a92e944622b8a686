#pragma once

#include <cstddef>

namespace sla {

/// Partitioning of a length-N sequence into query blocks of b_q rows and
/// key/value blocks of b_kv rows. Block sizes must divide N exactly; there
/// is no implicit padding.
struct BlockLayout {
  std::size_t n = 0;    // sequence length
  std::size_t d = 0;    // head dimension
  std::size_t b_q = 0;  // rows per query block
  std::size_t b_kv = 0; // rows per key/value block
  std::size_t t_m = 0;  // n / b_q query blocks
  std::size_t t_n = 0;  // n / b_kv key/value blocks

  std::size_t q_begin(std::size_t i) const { return i * b_q; }
  std::size_t kv_begin(std::size_t j) const { return j * b_kv; }
};

/// Throws std::invalid_argument when a block size does not divide N.
BlockLayout make_block_layout(std::size_t n, std::size_t d, std::size_t b_q,
                              std::size_t b_kv);

}  // namespace sla
