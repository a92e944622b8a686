#include "sla/aggregation.hpp"

#include <bit>
#include <stdexcept>

namespace sla {

namespace {

template <typename T>
void assign_pair(Mat<T>& h_out, std::vector<T>& z_out, const Mat<T>& h,
                 const std::vector<T>& z) {
  h_out = h;
  z_out = z;
}

template <typename T>
void add_pair(Mat<T>& h_out, std::vector<T>& z_out, const Mat<T>& h,
              const std::vector<T>& z) {
  add_inplace(h_out, h);
  for (std::size_t c = 0; c < z.size(); ++c) z_out[c] += z[c];
}

template <typename T>
void sub_pair(Mat<T>& h_out, std::vector<T>& z_out, const Mat<T>& h,
              const std::vector<T>& z) {
  for (std::size_t i = 0; i < h_out.data.size(); ++i)
    h_out.data[i] -= h.data[i];
  for (std::size_t c = 0; c < z.size(); ++c) z_out[c] -= z[c];
}

template <typename T>
void zero_pair(Mat<T>& h_out, std::vector<T>& z_out, std::size_t d) {
  h_out = Mat<T>(d, d);
  z_out.assign(d, T(0));
}

}  // namespace

template <typename T>
void aggregate_direct(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& idx, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters) {
  zero_pair(h_out, z_out, s.d);
  bool first = true;
  for (const auto j : idx) {
    if (j >= s.count) throw std::invalid_argument("aggregate_direct: index");
    if (first) {
      assign_pair(h_out, z_out, s.h[j], s.z[j]);
      first = false;
    } else {
      add_pair(h_out, z_out, s.h[j], s.z[j]);
      if (counters) ++counters->additions;
    }
  }
}

template <typename T>
void aggregate_complement(const KvSummaries<T>& s,
                          const std::vector<std::uint32_t>& excluded_idx,
                          Mat<T>& h_out, std::vector<T>& z_out,
                          AggCounters* counters) {
  h_out = s.h_total;
  z_out = s.z_total;
  for (const auto j : excluded_idx) {
    if (j >= s.count)
      throw std::invalid_argument("aggregate_complement: index");
    sub_pair(h_out, z_out, s.h[j], s.z[j]);
    if (counters) ++counters->subtractions;
  }
}

template <typename T>
FourRussiansTables<T> build_four_russians_tables(const KvSummaries<T>& s,
                                                 std::size_t g,
                                                 AggCounters* counters) {
  if (g == 0) throw std::invalid_argument("four russians: g must be >= 1");
  if (g > 20)
    throw std::invalid_argument("four russians: g > 20 would need a 2^g table");

  FourRussiansTables<T> t;
  t.g = g;
  t.count = s.count;
  t.d = s.d;
  t.num_groups = (s.count + g - 1) / g;
  t.h_tables.resize(t.num_groups);
  t.z_tables.resize(t.num_groups);

  for (std::size_t gi = 0; gi < t.num_groups; ++gi) {
    const std::size_t begin = t.group_begin(gi);
    const std::size_t size = t.group_size(gi);
    const std::size_t entries = std::size_t(1) << size;
    auto& ht = t.h_tables[gi];
    auto& zt = t.z_tables[gi];
    ht.assign(entries, Mat<T>(s.d, s.d));
    zt.assign(entries, std::vector<T>(s.d, T(0)));

    // Gray-code walk: entry gray(i) differs from gray(i-1) in exactly the
    // bit countr_zero(i), so each entry is one +/- away from the previous.
    std::size_t prev = 0;
    for (std::size_t i = 1; i < entries; ++i) {
      const std::size_t code = i ^ (i >> 1);
      const std::size_t bit = std::size_t(std::countr_zero(i));
      const std::size_t member = begin + bit;
      ht[code] = ht[prev];
      zt[code] = zt[prev];
      if (code & (std::size_t(1) << bit))
        add_pair(ht[code], zt[code], s.h[member], s.z[member]);
      else
        sub_pair(ht[code], zt[code], s.h[member], s.z[member]);
      if (counters) ++counters->table_build_additions;
      prev = code;
    }
  }
  return t;
}

template <typename T>
void aggregate_four_russians(const FourRussiansTables<T>& tables,
                             const std::vector<std::uint8_t>& member_bits,
                             Mat<T>& h_out, std::vector<T>& z_out,
                             AggCounters* counters) {
  if (member_bits.size() != tables.count)
    throw std::invalid_argument("aggregate_four_russians: bitmask length");
  zero_pair(h_out, z_out, tables.d);
  bool first = true;
  for (std::size_t gi = 0; gi < tables.num_groups; ++gi) {
    const std::size_t begin = tables.group_begin(gi);
    const std::size_t size = tables.group_size(gi);
    std::size_t code = 0;
    for (std::size_t r = 0; r < size; ++r)
      if (member_bits[begin + r]) code |= std::size_t(1) << r;
    if (code == 0) continue;
    if (counters) ++counters->lookups;
    if (first) {
      assign_pair(h_out, z_out, tables.h_tables[gi][code],
                  tables.z_tables[gi][code]);
      first = false;
    } else {
      add_pair(h_out, z_out, tables.h_tables[gi][code],
               tables.z_tables[gi][code]);
      if (counters) ++counters->additions;
    }
  }
}

AggregationKind resolve_strategy(AggregationKind requested,
                                 double marginal_fraction,
                                 double auto_direct_max,
                                 double auto_complement_min) {
  if (requested != AggregationKind::auto_select) return requested;
  if (marginal_fraction <= auto_direct_max) return AggregationKind::direct;
  if (marginal_fraction >= auto_complement_min)
    return AggregationKind::complement;
  return AggregationKind::four_russians;
}

template <typename T>
void aggregate_subset(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& subset_idx,
                      AggregationKind strategy,
                      const FourRussiansTables<T>* tables, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters) {
  switch (strategy) {
    case AggregationKind::direct:
      aggregate_direct(s, subset_idx, h_out, z_out, counters);
      return;
    case AggregationKind::complement: {
      std::vector<std::uint32_t> excluded;
      excluded.reserve(s.count - subset_idx.size());
      std::size_t p = 0;
      for (std::uint32_t j = 0; j < s.count; ++j) {
        if (p < subset_idx.size() && subset_idx[p] == j)
          ++p;
        else
          excluded.push_back(j);
      }
      aggregate_complement(s, excluded, h_out, z_out, counters);
      return;
    }
    case AggregationKind::four_russians: {
      if (!tables)
        throw std::invalid_argument("aggregate_subset: missing tables");
      std::vector<std::uint8_t> bits(s.count, 0);
      for (const auto j : subset_idx) bits[j] = 1;
      aggregate_four_russians(*tables, bits, h_out, z_out, counters);
      return;
    }
    case AggregationKind::auto_select:
      throw std::invalid_argument("aggregate_subset: strategy not resolved");
  }
}

template <typename T>
void aggregate_subset(const KvSummaries<T>& s,
                      const std::vector<std::uint32_t>& subset_idx,
                      AggregationKind strategy, Mat<T>& h_out,
                      std::vector<T>& z_out, AggCounters* counters) {
  aggregate_subset(s, subset_idx, strategy,
                   static_cast<const FourRussiansTables<T>*>(nullptr), h_out,
                   z_out, counters);
}

#define SLA_INSTANTIATE_AGG(T)                                               \
  template void aggregate_direct<T>(const KvSummaries<T>&,                   \
                                    const std::vector<std::uint32_t>&,       \
                                    Mat<T>&, std::vector<T>&, AggCounters*); \
  template void aggregate_complement<T>(                                     \
      const KvSummaries<T>&, const std::vector<std::uint32_t>&, Mat<T>&,     \
      std::vector<T>&, AggCounters*);                                        \
  template FourRussiansTables<T> build_four_russians_tables<T>(              \
      const KvSummaries<T>&, std::size_t, AggCounters*);                     \
  template void aggregate_four_russians<T>(                                  \
      const FourRussiansTables<T>&, const std::vector<std::uint8_t>&,        \
      Mat<T>&, std::vector<T>&, AggCounters*);                               \
  template void aggregate_subset<T>(const KvSummaries<T>&,                   \
                                    const std::vector<std::uint32_t>&,       \
                                    AggregationKind,                         \
                                    const FourRussiansTables<T>*, Mat<T>&,   \
                                    std::vector<T>&, AggCounters*);          \
  template void aggregate_subset<T>(const KvSummaries<T>&,                   \
                                    const std::vector<std::uint32_t>&,       \
                                    AggregationKind, Mat<T>&,                \
                                    std::vector<T>&, AggCounters*);

SLA_INSTANTIATE_AGG(float)
SLA_INSTANTIATE_AGG(double)
#undef SLA_INSTANTIATE_AGG

}  // namespace sla
