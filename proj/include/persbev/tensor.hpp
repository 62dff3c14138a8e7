#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace persbev {

// Dense row-major tensor; the last dimension is contiguous.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, T fill = T{}) : dims_(std::move(dims)) {
    std::size_t n = dims_.empty() ? 0 : 1;
    for (std::size_t d : dims_) n *= d;
    data_.assign(n, fill);
  }

  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  T& operator()(std::size_t i0) { return data_[i0]; }
  const T& operator()(std::size_t i0) const { return data_[i0]; }

  T& operator()(std::size_t i0, std::size_t i1) { return data_[i0 * dims_[1] + i1]; }
  const T& operator()(std::size_t i0, std::size_t i1) const { return data_[i0 * dims_[1] + i1]; }

  T& operator()(std::size_t i0, std::size_t i1, std::size_t i2) {
    return data_[(i0 * dims_[1] + i1) * dims_[2] + i2];
  }
  const T& operator()(std::size_t i0, std::size_t i1, std::size_t i2) const {
    return data_[(i0 * dims_[1] + i1) * dims_[2] + i2];
  }

  T& operator()(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) {
    return data_[((i0 * dims_[1] + i1) * dims_[2] + i2) * dims_[3] + i3];
  }
  const T& operator()(std::size_t i0, std::size_t i1, std::size_t i2, std::size_t i3) const {
    return data_[((i0 * dims_[1] + i1) * dims_[2] + i2) * dims_[3] + i3];
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

namespace detail {

inline void append_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

// Fixture format: magic "PBEV", u32-LE rank, u32-LE dims, f32-LE payload,
// row-major with the last listed dim contiguous.
inline void save_pbev(const std::string& path, const Tensor<float>& t) {
  std::string buf;
  buf.reserve(8 + 4 * t.rank() + 4 * t.size());
  buf.append("PBEV", 4);
  detail::append_u32le(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) {
    detail::append_u32le(buf, static_cast<std::uint32_t>(t.dim(i)));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    detail::append_u32le(buf, std::bit_cast<std::uint32_t>(t.data()[i]));
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor<float> load_pbev(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 8 || std::memcmp(p, "PBEV", 4) != 0) {
    throw std::runtime_error("not a PBEV tensor file: " + path);
  }
  std::uint32_t rank = detail::read_u32le(p + 4);
  if (rank > 8) throw std::runtime_error("PBEV rank out of range: " + path);
  if (buf.size() < 8 + 4ull * rank) throw std::runtime_error("truncated PBEV header: " + path);
  std::vector<std::size_t> dims(rank);
  std::size_t n = rank == 0 ? 0 : 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims[i] = detail::read_u32le(p + 8 + 4 * i);
    n *= dims[i];
  }
  std::size_t payload_off = 8 + 4ull * rank;
  if (buf.size() != payload_off + 4ull * n) throw std::runtime_error("PBEV payload size mismatch: " + path);
  Tensor<float> t(dims);
  for (std::size_t i = 0; i < n; ++i) {
    t.data()[i] = std::bit_cast<float>(detail::read_u32le(p + payload_off + 4 * i));
  }
  return t;
}

}  // namespace persbev
