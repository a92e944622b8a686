#include "sla/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "sla/oracle.hpp"
#include "sla/rng.hpp"

namespace sla {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Flat indices of the k largest entries; ties go to the lower flat index.
std::vector<std::size_t> top_k_indices(const MatD& p, std::size_t k) {
  std::vector<std::size_t> order(p.data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(),
                   [&p](std::size_t a, std::size_t b) {
                     return p.data[a] > p.data[b];
                   });
  order.resize(std::min(k, order.size()));
  return order;
}

}  // namespace

WeightHistogram weight_histogram(const MatD& p) {
  const std::size_t n = p.rows;
  if (n == 0 || p.cols != n)
    throw std::invalid_argument("weight_histogram: P must be square N x N");

  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += p(i, j);
    if (std::abs(sum - 1.0) > 1e-6) {
      std::cerr << "weight_histogram: row " << i << " sums to " << sum
                << ", not 1; proceeding\n";
      break;
    }
  }

  WeightHistogram h;
  const double mean = 1.0 / double(n);
  const double tiny = 1.0 / (100.0 * double(n));
  std::uint64_t above = 0, below = 0;
  for (const double v : p.data) {
    if (v > mean)
      ++above;
    else if (v < tiny)
      ++below;
  }
  const double total = double(p.data.size());
  h.frac_above_mean = double(above) / total;
  h.frac_below_tiny = double(below) / total;
  h.frac_middle = 1.0 - h.frac_above_mean - h.frac_below_tiny;

  constexpr int kBins = 50;
  h.bin_edges.resize(kBins + 1);
  for (int b = 0; b <= kBins; ++b)
    h.bin_edges[b] = std::pow(10.0, -10.0 + 10.0 * double(b) / kBins);
  h.bin_counts.assign(kBins, 0);
  for (const double v : p.data) {
    int b = v <= h.bin_edges.front()
                ? 0
                : int(std::floor((std::log10(v) + 10.0) / 10.0 * kBins));
    b = std::clamp(b, 0, kBins - 1);
    ++h.bin_counts[std::size_t(b)];
  }
  return h;
}

double stable_rank(const MatD& a) {
  const double fro_sq = frobenius_norm_sq(a);
  if (fro_sq == 0.0)
    throw std::invalid_argument("stable_rank: zero matrix");

  // power iteration on the smaller Gram matrix
  const bool tall = a.rows >= a.cols;
  const std::size_t dim = tall ? a.cols : a.rows;
  SplitMix64 rng(0x5eed5eed5eed5eedULL);
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.uniform() - 0.5;

  auto normalize = [](std::vector<double>& x) {
    double s = 0;
    for (const double e : x) s += e * e;
    s = std::sqrt(s);
    if (s > 0)
      for (auto& e : x) e /= s;
    return s;
  };
  normalize(v);

  std::vector<double> tmp(tall ? a.rows : a.cols), next(dim);
  double lambda = 0;
  constexpr int kMaxIters = 5000;
  for (int it = 0; it < kMaxIters; ++it) {
    // next = Gram * v  (A^T A v for tall, A A^T v for wide)
    std::fill(tmp.begin(), tmp.end(), 0.0);
    std::fill(next.begin(), next.end(), 0.0);
    if (tall) {
      for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row(i);
        double acc = 0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * v[j];
        tmp[i] = acc;
      }
      for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row(i);
        const double t = tmp[i];
        for (std::size_t j = 0; j < a.cols; ++j) next[j] += row[j] * t;
      }
    } else {
      for (std::size_t j = 0; j < a.cols; ++j) {
        double acc = 0;
        for (std::size_t i = 0; i < a.rows; ++i) acc += a(i, j) * v[i];
        tmp[j] = acc;
      }
      for (std::size_t i = 0; i < a.rows; ++i) {
        const double* row = a.row(i);
        double acc = 0;
        for (std::size_t j = 0; j < a.cols; ++j) acc += row[j] * tmp[j];
        next[i] = acc;
      }
    }
    double rayleigh = 0;
    for (std::size_t i = 0; i < dim; ++i) rayleigh += v[i] * next[i];
    const double norm = normalize(next);
    v.swap(next);
    if (norm == 0.0) break;  // v landed in the null space; restart not needed
    if (it > 0 && std::abs(rayleigh - lambda) <= 1e-8 * std::abs(rayleigh)) {
      lambda = rayleigh;
      break;
    }
    lambda = rayleigh;
  }
  return fro_sq / lambda;
}

DecompositionReport decompose_weights(const MatD& p, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction < 1.0))
    throw std::invalid_argument("decompose_weights: top_fraction in (0,1)");

  const std::size_t keep =
      std::size_t(std::floor(top_fraction * double(p.data.size()) + 0.5));
  MatD top(p.rows, p.cols), rest = p;
  for (const std::size_t flat : top_k_indices(p, keep)) {
    top.data[flat] = p.data[flat];
    rest.data[flat] = 0.0;
  }

  DecompositionReport r;
  r.top_fraction = top_fraction;
  r.stable_rank_full = stable_rank(p);
  r.stable_rank_top = frobenius_norm_sq(top) == 0.0 ? 0.0 : stable_rank(top);
  r.stable_rank_rest = frobenius_norm_sq(rest) == 0.0 ? 0.0 : stable_rank(rest);
  return r;
}

double sparse_approx_error(const MatD& q, const MatD& k, const MatD& v,
                           double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw std::invalid_argument("sparse_approx_error: keep_fraction in (0,1]");

  const DenseAttentionArtifacts full = dense_attention_forward(q, k, v);
  const std::size_t n = full.p.rows;
  const std::size_t keep =
      std::size_t(std::floor(keep_fraction * double(n) * double(n) + 0.5));

  std::vector<std::uint8_t> mask(n * n, 0);
  for (const std::size_t flat : top_k_indices(full.p, keep)) mask[flat] = 1;
  // one surviving entry per row, at the row maximum
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false;
    std::size_t argmax = i * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask[i * n + j]) any = true;
      if (full.p.data[i * n + j] > full.p.data[argmax]) argmax = i * n + j;
    }
    if (!any) mask[argmax] = 1;
  }

  MatD masked_scores = full.s;
  for (std::size_t flat = 0; flat < mask.size(); ++flat)
    if (!mask[flat]) masked_scores.data[flat] = kNegInf;

  // renormalized restricted softmax, same code path as the full weights
  MatD o_masked(n, v.cols);
  {
    MatD pm(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      double m = kNegInf;
      for (std::size_t j = 0; j < n; ++j)
        m = std::max(m, masked_scores(i, j));
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double s = masked_scores(i, j);
        pm(i, j) = std::isinf(s) ? 0.0 : std::exp(s - m);
        sum += pm(i, j);
      }
      for (std::size_t j = 0; j < n; ++j) pm(i, j) /= sum;
    }
    o_masked = matmul(pm, v);
  }

  double num = 0, den = 0;
  for (std::size_t i = 0; i < full.o.data.size(); ++i) {
    num += std::abs(o_masked.data[i] - full.o.data[i]);
    den += std::abs(full.o.data[i]);
  }
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace sla
