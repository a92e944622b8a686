#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace sla {

/// Static contiguous partition of [begin, end) over `threads` workers.
/// fn(index, worker) is called for every index; workers own disjoint index
/// ranges, so results are independent of the thread count as long as fn
/// writes only worker-local or index-owned data.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, unsigned threads,
                  Fn&& fn) {
  const std::size_t count = end - begin;
  if (count == 0) return;
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
  if (workers == 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i, std::size_t(0));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, w, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sla
