#pragma once

#include <string>
#include <variant>

#include "sla/config.hpp"
#include "sla/mat.hpp"

namespace sla {

/// Runtime-typed tensor used at I/O boundaries. Construction rejects
/// non-finite entries; kernels that legitimately carry -inf (masked
/// scores) work on Mat<T> directly and never pass through this type.
class Tensor {
 public:
  Tensor(MatF m, bool allow_non_finite = false);
  Tensor(MatD m, bool allow_non_finite = false);

  Dtype dtype() const {
    return std::holds_alternative<MatF>(m_) ? Dtype::f32 : Dtype::f64;
  }
  std::size_t rows() const;
  std::size_t cols() const;

  const MatF& f32() const { return std::get<MatF>(m_); }
  const MatD& f64() const { return std::get<MatD>(m_); }

  /// Value copy in the requested precision.
  MatD as_f64() const;
  MatF as_f32() const;

 private:
  std::variant<MatF, MatD> m_;
};

/// Sidecar pair <prefix>.json + <prefix>.bin.
/// JSON: {"rows": int, "cols": int, "dtype": "f32"|"f64", "layout": "row_major"}.
/// BIN: raw little-endian IEEE-754 values, row-major, no header, exactly
/// rows*cols elements. Round-trips are bit-exact.
void save_tensor(const Tensor& t, const std::string& path_prefix);
Tensor load_tensor(const std::string& path_prefix);

}  // namespace sla
