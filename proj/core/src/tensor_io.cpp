#include "sla/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace sla {

namespace {

void reject_non_finite(std::size_t rows, std::size_t cols, const auto& mat,
                       bool allow) {
  if (allow) return;
  if (auto bad = find_non_finite(mat))
    throw std::invalid_argument("Tensor: non-finite entry at (" +
                                std::to_string(bad->first) + ", " +
                                std::to_string(bad->second) + ")");
  (void)rows;
  (void)cols;
}

template <typename T>
void byteswap_values(std::vector<T>& values) {
  for (auto& v : values) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    v = std::bit_cast<T>(bytes);
  }
}

template <typename T>
void write_bin(const std::string& path, std::vector<T> values) {
  if constexpr (std::endian::native == std::endian::big)
    byteswap_values(values);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(values.data()),
           std::streamsize(values.size() * sizeof(T)));
  if (!os) throw std::runtime_error("short write: " + path);
}

template <typename T>
std::vector<T> read_bin(const std::string& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  const auto size = std::size_t(is.tellg());
  if (size != count * sizeof(T))
    throw std::runtime_error(path + ": expected " +
                             std::to_string(count * sizeof(T)) +
                             " bytes, found " + std::to_string(size));
  std::vector<T> values(count);
  is.seekg(0);
  is.read(reinterpret_cast<char*>(values.data()), std::streamsize(size));
  if (!is) throw std::runtime_error("short read: " + path);
  if constexpr (std::endian::native == std::endian::big)
    byteswap_values(values);
  return values;
}

}  // namespace

Tensor::Tensor(MatF m, bool allow_non_finite) : m_(std::move(m)) {
  const auto& f = std::get<MatF>(m_);
  reject_non_finite(f.rows, f.cols, f, allow_non_finite);
}

Tensor::Tensor(MatD m, bool allow_non_finite) : m_(std::move(m)) {
  const auto& f = std::get<MatD>(m_);
  reject_non_finite(f.rows, f.cols, f, allow_non_finite);
}

std::size_t Tensor::rows() const {
  return std::visit([](const auto& m) { return m.rows; }, m_);
}

std::size_t Tensor::cols() const {
  return std::visit([](const auto& m) { return m.cols; }, m_);
}

MatD Tensor::as_f64() const {
  if (dtype() == Dtype::f64) return f64();
  return cast_mat<double>(f32());
}

MatF Tensor::as_f32() const {
  if (dtype() == Dtype::f32) return f32();
  return cast_mat<float>(f64());
}

void save_tensor(const Tensor& t, const std::string& path_prefix) {
  nlohmann::ordered_json meta;
  meta["rows"] = t.rows();
  meta["cols"] = t.cols();
  meta["dtype"] = to_string(t.dtype());
  meta["layout"] = "row_major";
  std::ofstream js(path_prefix + ".json");
  if (!js) throw std::runtime_error("cannot open for write: " + path_prefix + ".json");
  js << meta.dump(2) << "\n";

  if (t.dtype() == Dtype::f32)
    write_bin<float>(path_prefix + ".bin", t.f32().data);
  else
    write_bin<double>(path_prefix + ".bin", t.f64().data);
}

Tensor load_tensor(const std::string& path_prefix) {
  std::ifstream js(path_prefix + ".json");
  if (!js) throw std::runtime_error("cannot open for read: " + path_prefix + ".json");
  nlohmann::json meta = nlohmann::json::parse(js);
  const auto rows = meta.at("rows").get<std::size_t>();
  const auto cols = meta.at("cols").get<std::size_t>();
  const auto dtype = parse_dtype(meta.at("dtype").get<std::string>());
  if (meta.at("layout").get<std::string>() != "row_major")
    throw std::runtime_error(path_prefix + ": unsupported layout");

  if (dtype == Dtype::f32) {
    auto values = read_bin<float>(path_prefix + ".bin", rows * cols);
    return Tensor(MatF(rows, cols, std::move(values)));
  }
  auto values = read_bin<double>(path_prefix + ".bin", rows * cols);
  return Tensor(MatD(rows, cols, std::move(values)));
}

}  // namespace sla
