#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace sla {

/// Dense row-major matrix. The single carrier for queries, keys, values,
/// outputs, gradients and diagnostics. Blocks are addressed by index
/// arithmetic on the parent; there are no view types.
template <typename T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
  Mat(std::size_t r, std::size_t c, std::vector<T> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
      throw std::invalid_argument("Mat: data size does not match rows*cols");
  }

  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }

  T* row(std::size_t i) { return data.data() + i * cols; }
  const T* row(std::size_t i) const { return data.data() + i * cols; }

  bool same_shape(const Mat& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

template <typename To, typename From>
Mat<To> cast_mat(const Mat<From>& a) {
  Mat<To> out(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = static_cast<To>(a.data[i]);
  return out;
}

/// First non-finite entry, if any, as (row, col).
template <typename T>
std::optional<std::pair<std::size_t, std::size_t>> find_non_finite(
    const Mat<T>& a) {
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      if (!std::isfinite(a(i, j))) return std::make_pair(i, j);
  return std::nullopt;
}

// --- small dense kernels used across the library ---

/// C = A * B
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims");
  Mat<T> c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.row(i);
    T* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T aik = ai[k];
      if (aik == T(0)) continue;
      const T* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// C = A * B^T
template <typename T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims");
  Mat<T> c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* bj = b.row(j);
      T acc = 0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      c(i, j) = acc;
    }
  }
  return c;
}

/// C = A^T * B
template <typename T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims");
  Mat<T> c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const T* ak = a.row(k);
    const T* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const T aki = ak[i];
      if (aki == T(0)) continue;
      T* ci = c.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
  Mat<T> t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
void add_inplace(Mat<T>& a, const Mat<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
Mat<T> add(const Mat<T>& a, const Mat<T>& b) {
  Mat<T> c = a;
  add_inplace(c, b);
  return c;
}

template <typename T>
Mat<T> sub(const Mat<T>& a, const Mat<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("sub: shape");
  Mat<T> c(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    c.data[i] = a.data[i] - b.data[i];
  return c;
}

template <typename T>
Mat<T> scale(const Mat<T>& a, T s) {
  Mat<T> c = a;
  for (auto& v : c.data) v *= s;
  return c;
}

template <typename T>
double frobenius_norm_sq(const Mat<T>& a) {
  double acc = 0;
  for (const auto& v : a.data) acc += double(v) * double(v);
  return acc;
}

template <typename T>
double max_abs(const Mat<T>& a) {
  double m = 0;
  for (const auto& v : a.data) m = std::max(m, std::abs(double(v)));
  return m;
}

/// max-norm relative difference: ||a-b||_inf / max(||b||_inf, floor)
template <typename T>
double rel_diff(const Mat<T>& a, const Mat<T>& b, double floor = 1e-300) {
  if (!a.same_shape(b)) throw std::invalid_argument("rel_diff: shape");
  double num = 0, den = floor;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    num = std::max(num, std::abs(double(a.data[i]) - double(b.data[i])));
    den = std::max(den, std::abs(double(b.data[i])));
  }
  return num / den;
}

}  // namespace sla
