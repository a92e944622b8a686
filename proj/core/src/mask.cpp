#include "sla/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace sla {

std::size_t CompressedMask::total_critical() const {
  std::size_t n = 0;
  for (const auto& c : counts) n += c.critical;
  return n;
}

std::size_t CompressedMask::total_marginal() const {
  std::size_t n = 0;
  for (const auto& c : counts) n += c.marginal;
  return n;
}

double CompressedMask::critical_fraction() const {
  return double(total_critical()) / double(t_m * t_n);
}

double CompressedMask::marginal_fraction() const {
  return double(total_marginal()) / double(t_m * t_n);
}

std::vector<std::uint32_t> CompressedMask::marginal_rows_of_column(
    std::size_t j) const {
  std::vector<std::uint32_t> rows;
  for (std::size_t i = 0; i < t_m; ++i)
    if (label(i, j) == 0) rows.push_back(std::uint32_t(i));
  return rows;
}

MatD pool_mean(const MatD& x, std::size_t b) {
  if (b == 0 || x.rows % b != 0)
    throw std::invalid_argument("pool_mean: b must divide rows");
  const std::size_t groups = x.rows / b;
  MatD out(groups, x.cols);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t r = 0; r < b; ++r) {
      const double* src = x.row(g * b + r);
      double* dst = out.row(g);
      for (std::size_t c = 0; c < x.cols; ++c) dst[c] += src[c];
    }
    double* dst = out.row(g);
    for (std::size_t c = 0; c < x.cols; ++c) dst[c] /= double(b);
  }
  return out;
}

CompressedWeights predict_compressed_weights(const MatD& q, const MatD& k,
                                             const BlockLayout& layout) {
  if (q.rows != layout.n || q.cols != layout.d || k.rows != layout.n ||
      k.cols != layout.d)
    throw std::invalid_argument("predict_compressed_weights: shape mismatch");
  const MatD pq = pool_mean(q, layout.b_q);
  const MatD pk = pool_mean(k, layout.b_kv);
  MatD scores = matmul_nt(pq, pk);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(layout.d));
  for (auto& v : scores.data) v *= inv_sqrt_d;

  // row softmax, max-shifted
  for (std::size_t i = 0; i < scores.rows; ++i) {
    double* row = scores.row(i);
    double m = row[0];
    for (std::size_t j = 1; j < scores.cols; ++j) m = std::max(m, row[j]);
    double sum = 0;
    for (std::size_t j = 0; j < scores.cols; ++j) {
      row[j] = std::exp(row[j] - m);
      sum += row[j];
    }
    for (std::size_t j = 0; j < scores.cols; ++j) row[j] /= sum;
  }
  return CompressedWeights{std::move(scores)};
}

namespace {

std::size_t round_half_up(double x) {
  return std::size_t(std::floor(x + 0.5));
}

}  // namespace

CompressedMask classify_mask(const CompressedWeights& weights, double k_h,
                             double k_l) {
  const MatD& p_c = weights.p_c;
  const std::size_t t_m = p_c.rows, t_n = p_c.cols;
  if (k_h + k_l > 100.0)
    throw std::invalid_argument("classify_mask: k_h + k_l > 100");

  std::size_t n1 = std::max<std::size_t>(1, round_half_up(k_h * double(t_n) / 100.0));
  n1 = std::min(n1, t_n);
  std::size_t n_neg = round_half_up(k_l * double(t_n) / 100.0);
  n_neg = std::min(n_neg, t_n - n1);  // disjointness cap, critical wins

  std::vector<std::int8_t> labels(t_m * t_n, 0);
  std::vector<std::uint32_t> order(t_n);
  for (std::size_t i = 0; i < t_m; ++i) {
    const double* row = p_c.row(i);
    std::iota(order.begin(), order.end(), 0u);
    // descending by value; ties -> lower column index first, so the lower
    // index lands in the higher class on both boundaries
    std::stable_sort(order.begin(), order.end(),
                     [row](std::uint32_t a, std::uint32_t b) {
                       return row[a] > row[b];
                     });
    for (std::size_t r = 0; r < n1; ++r) labels[i * t_n + order[r]] = 1;
    for (std::size_t r = 0; r < n_neg; ++r)
      labels[i * t_n + order[t_n - 1 - r]] = -1;
  }
  return build_lookup(t_m, t_n, std::move(labels));
}

CompressedMask build_lookup(std::size_t t_m, std::size_t t_n,
                            std::vector<std::int8_t> labels) {
  if (labels.size() != t_m * t_n)
    throw std::invalid_argument("build_lookup: label grid size mismatch");
  CompressedMask mask;
  mask.t_m = t_m;
  mask.t_n = t_n;
  mask.labels = std::move(labels);
  mask.critical_idx.resize(t_m);
  mask.marginal_idx.resize(t_m);
  mask.counts.resize(t_m);
  for (std::size_t i = 0; i < t_m; ++i) {
    auto& c = mask.counts[i];
    for (std::size_t j = 0; j < t_n; ++j) {
      switch (mask.labels[i * t_n + j]) {
        case 1:
          mask.critical_idx[i].push_back(std::uint32_t(j));
          ++c.critical;
          break;
        case 0:
          mask.marginal_idx[i].push_back(std::uint32_t(j));
          ++c.marginal;
          break;
        case -1:
          ++c.negligible;
          break;
        default:
          throw std::invalid_argument("build_lookup: label must be -1, 0 or 1");
      }
    }
  }
  return mask;
}

std::string mask_to_json(const CompressedMask& mask) {
  nlohmann::ordered_json j;
  j["T_m"] = mask.t_m;
  j["T_n"] = mask.t_n;
  j["labels"] = mask.labels;
  return j.dump();
}

CompressedMask mask_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  const auto t_m = j.at("T_m").get<std::size_t>();
  const auto t_n = j.at("T_n").get<std::size_t>();
  auto labels = j.at("labels").get<std::vector<std::int8_t>>();
  return build_lookup(t_m, t_n, std::move(labels));
}

}  // namespace sla
