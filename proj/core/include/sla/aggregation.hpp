#pragma once

#include <cstdint>
#include <vector>

#include "sla/config.hpp"
#include "sla/summaries.hpp"

namespace sla {

/// Block-level operation counts. One unit = one (d x d, d) summary-pair
/// accumulation. The first term written into a zeroed accumulator is a
/// copy, not an addition; empty groups are skipped entirely.
struct AggCounters {
  std::uint64_t additions = 0;
  std::uint64_t subtractions = 0;
  std::uint64_t table_build_additions = 0;
  std::uint64_t lookups = 0;
};

/// H = sum of s.h[j] over the (ascending) index list, Z likewise.
template <typename T>
void aggregate_direct(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& idx, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters = nullptr);

/// H = h_total - sum over the complement list (the indices NOT wanted).
template <typename T>
void aggregate_complement(const KvSummaries<T>& s,
                          const std::vector<std::uint32_t>& excluded_idx,
                          Mat<T>& h_out, std::vector<T>& z_out,
                          AggCounters* counters = nullptr);

/// All 2^g subset sums of g consecutive blocks, per group. The last group
/// may be ragged and gets a proportionally smaller table. Entries are
/// built in Gray-code order, one +/- h_j from the previous entry each.
template <typename T>
struct FourRussiansTables {
  std::size_t g = 0;
  std::size_t count = 0;  // total blocks covered
  std::size_t d = 0;
  std::size_t num_groups = 0;
  std::vector<std::vector<Mat<T>>> h_tables;          // [group][bitmask]
  std::vector<std::vector<std::vector<T>>> z_tables;  // [group][bitmask]

  std::size_t group_begin(std::size_t gi) const { return gi * g; }
  std::size_t group_size(std::size_t gi) const {
    const std::size_t b = group_begin(gi);
    return b + g <= count ? g : count - b;
  }
};

/// Throws std::invalid_argument for g > 20 (table-size guard) or g == 0.
template <typename T>
FourRussiansTables<T> build_four_russians_tables(const KvSummaries<T>& s,
                                                 std::size_t g,
                                                 AggCounters* counters = nullptr);

/// One table lookup per group with any selected member; empty groups cost
/// nothing. `member_bits` has one entry per block.
template <typename T>
void aggregate_four_russians(const FourRussiansTables<T>& tables,
                             const std::vector<std::uint8_t>& member_bits,
                             Mat<T>& h_out, std::vector<T>& z_out,
                             AggCounters* counters = nullptr);

/// Resolve auto_select against the global marginal block fraction.
AggregationKind resolve_strategy(AggregationKind requested,
                                 double marginal_fraction,
                                 double auto_direct_max,
                                 double auto_complement_min);

/// Strategy-dispatched sum over an ascending subset of block indices.
/// `tables` is required when strategy == four_russians.
template <typename T>
void aggregate_subset(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& subset_idx,
                      AggregationKind strategy,
                      const FourRussiansTables<T>* tables, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters = nullptr);

/// Same, for the strategies that need no tables (direct / complement).
template <typename T>
void aggregate_subset(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& subset_idx,
                      AggregationKind strategy, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters = nullptr);

}  // namespace sla
