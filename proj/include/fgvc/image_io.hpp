#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "fgvc/tensor.hpp"

// Binary PPM (P6) and PGM (P5) with maxval 255; pixel values map to [0,1].

namespace fgvc {

namespace detail {

inline int next_pnm_token(std::istream& is) {
  // Skips whitespace and '#' comments, returns the next integer.
  int c = is.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = is.get();
    } else if (std::isspace(c)) {
      c = is.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) return -1;
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = is.get();
  }
  return value;
}

inline unsigned char to_byte(double v) {
  double s = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
  return static_cast<unsigned char>(s);
}

}  // namespace detail

inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(2) != 3)
    throw std::invalid_argument("write_ppm: image must be [H,W,3]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path);
  os << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < img.size(); ++i)
    os.put(static_cast<char>(detail::to_byte(img.data[i])));
  if (!os) throw std::runtime_error("write_ppm: write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_ppm: cannot open " + path);
  char m0 = 0, m1 = 0;
  is.get(m0);
  is.get(m1);
  if (m0 != 'P' || m1 != '6')
    throw std::runtime_error("read_ppm: not a binary PPM (P6): " + path);
  const int w = detail::next_pnm_token(is);
  const int h = detail::next_pnm_token(is);
  const int maxval = detail::next_pnm_token(is);
  if (w <= 0 || h <= 0)
    throw std::runtime_error("read_ppm: malformed header: " + path);
  if (maxval != 255)
    throw std::runtime_error("read_ppm: unsupported maxval (expect 255): " + path);
  Tensor img({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
  for (std::size_t i = 0; i < img.size(); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("read_ppm: truncated pixel data: " + path);
    img.data[i] = static_cast<double>(c) / 255.0;
  }
  return img;
}

inline void write_pgm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 2)
    throw std::invalid_argument("write_pgm: image must be [H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < img.size(); ++i)
    os.put(static_cast<char>(detail::to_byte(img.data[i])));
  if (!os) throw std::runtime_error("write_pgm: write failed: " + path);
}

}  // namespace fgvc
