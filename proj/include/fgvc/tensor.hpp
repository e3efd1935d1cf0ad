#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgvc {

// Dense row-major tensor of 64-bit floats.  Images and feature maps are
// indexed channels-last (h, w, c).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(count(shape), 0.0) {
    check_shape(shape);
  }

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    check_shape(shape);
    if (data.size() != count(shape))
      throw std::invalid_argument("tensor: data length does not match shape");
  }

  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::size_t idx2(std::size_t i, std::size_t j) const {
    return i * shape[1] + j;
  }
  std::size_t idx3(std::size_t h, std::size_t w, std::size_t c) const {
    return (h * shape[1] + w) * shape[2] + c;
  }
  std::size_t idx4(std::size_t a, std::size_t b, std::size_t c,
                   std::size_t d) const {
    return ((a * shape[1] + b) * shape[2] + c) * shape[3] + d;
  }

  double& at2(std::size_t i, std::size_t j) { return data[idx2(i, j)]; }
  double at2(std::size_t i, std::size_t j) const { return data[idx2(i, j)]; }
  double& at3(std::size_t h, std::size_t w, std::size_t c) {
    return data[idx3(h, w, c)];
  }
  double at3(std::size_t h, std::size_t w, std::size_t c) const {
    return data[idx3(h, w, c)];
  }
  double& at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data[idx4(a, b, c, d)];
  }
  double at4(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data[idx4(a, b, c, d)];
  }

  double min() const {
    return data.empty() ? 0.0 : *std::min_element(data.begin(), data.end());
  }
  double max() const {
    return data.empty() ? 0.0 : *std::max_element(data.begin(), data.end());
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

 private:
  static void check_shape(const std::vector<std::size_t>& s) {
    if (s.empty()) throw std::invalid_argument("tensor: empty shape");
    for (std::size_t d : s)
      if (d == 0) throw std::invalid_argument("tensor: zero dimension");
  }
};

namespace detail {

inline void store_u32le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void store_u64le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t load_u32le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t load_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

// TDF v1 tensor file: "TNSR", u32 version, u32 ndim, ndim x u64 dims,
// f32 little-endian data, row-major.
inline void write_tdf(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("tdf: cannot open for write: " + path);
  os.write("TNSR", 4);
  detail::store_u32le(os, 1u);
  detail::store_u32le(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape) detail::store_u64le(os, d);
  for (double v : t.data) {
    float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    detail::store_u32le(os, u);
  }
  if (!os) throw std::runtime_error("tdf: write failed: " + path);
}

inline Tensor read_tdf(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("tdf: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TNSR", 4) != 0)
    throw std::runtime_error("tdf: bad magic: " + path);
  std::uint32_t version = detail::load_u32le(is);
  if (version != 1u)
    throw std::runtime_error("tdf: unsupported version: " + path);
  std::uint32_t ndim = detail::load_u32le(is);
  if (ndim == 0 || ndim > 8)
    throw std::runtime_error("tdf: bad rank: " + path);
  std::vector<std::size_t> shape(ndim);
  for (auto& d : shape) d = static_cast<std::size_t>(detail::load_u64le(is));
  Tensor t(shape);
  for (double& v : t.data) {
    std::uint32_t u = detail::load_u32le(is);
    float f;
    std::memcpy(&f, &u, 4);
    v = static_cast<double>(f);
  }
  if (!is) throw std::runtime_error("tdf: truncated file: " + path);
  return t;
}

}  // namespace fgvc
