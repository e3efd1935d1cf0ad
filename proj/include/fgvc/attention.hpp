#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "fgvc/tensor.hpp"

// Attention-map geometry shared by inference and augmentation: object maps,
// threshold bounding boxes and feature->image box scaling.

namespace fgvc {

// Inclusive cell range in feature-map coordinates.
struct BoundingBox {
  std::size_t row_lo = 0, row_hi = 0;
  std::size_t col_lo = 0, col_hi = 0;

  bool operator==(const BoundingBox&) const = default;
  std::size_t rows() const { return row_hi - row_lo + 1; }
  std::size_t cols() const { return col_hi - col_lo + 1; }
};

// Half-open pixel ranges in image coordinates.
struct PixelBox {
  std::size_t y0 = 0, y1 = 0;
  std::size_t x0 = 0, x1 = 0;
};

// Min-max normalization to [0,1].  A constant map has no contrast to
// preserve: it maps to all-ones when positive, all-zeros when zero.
inline Tensor normalize_map01(const Tensor& m) {
  const double lo = m.min(), hi = m.max();
  Tensor out = m;
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (double& v : out.data) v = (v - lo) * inv;
  } else {
    const double fill = hi > 0.0 ? 1.0 : 0.0;
    for (double& v : out.data) v = fill;
  }
  return out;
}

// Mean over the M attention maps, min-max normalized; a constant mean map
// normalizes to all-ones.
inline Tensor object_map(const Tensor& attention) {
  if (attention.ndim() != 3)
    throw std::invalid_argument("object_map: attention must be [H,W,M]");
  const std::size_t h = attention.dim(0), w = attention.dim(1), m = attention.dim(2);
  Tensor mean({h, w});
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k) acc += attention.at3(y, x, k);
      mean.at2(y, x) = acc * inv;
    }
  const double lo = mean.min(), hi = mean.max();
  if (hi > lo) {
    const double s = 1.0 / (hi - lo);
    for (double& v : mean.data) v = (v - lo) * s;
  } else {
    for (double& v : mean.data) v = 1.0;
  }
  return mean;
}

// Minimal axis-aligned box covering every cell with value >= theta; the
// full extent if no cell qualifies.
inline BoundingBox attention_bbox(const Tensor& map01, double theta) {
  if (map01.ndim() != 2)
    throw std::invalid_argument("attention_bbox: map must be [H,W]");
  const std::size_t h = map01.dim(0), w = map01.dim(1);
  std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (map01.at2(y, x) >= theta) {
        any = true;
        if (y < r0) r0 = y;
        if (y > r1) r1 = y;
        if (x < c0) c0 = x;
        if (x > c1) c1 = x;
      }
  if (!any) return BoundingBox{0, h - 1, 0, w - 1};
  return BoundingBox{r0, r1, c0, c1};
}

// Scale a feature-cell box to pixel coordinates, rounding outward so the
// pixel box covers the full extent of the selected cells.
inline PixelBox scale_box_to_image(const BoundingBox& box, std::size_t feat_h,
                                   std::size_t feat_w, std::size_t img_h,
                                   std::size_t img_w) {
  const double ry = static_cast<double>(img_h) / static_cast<double>(feat_h);
  const double rx = static_cast<double>(img_w) / static_cast<double>(feat_w);
  PixelBox p;
  p.y0 = static_cast<std::size_t>(std::floor(static_cast<double>(box.row_lo) * ry));
  p.y1 = static_cast<std::size_t>(std::ceil(static_cast<double>(box.row_hi + 1) * ry));
  p.x0 = static_cast<std::size_t>(std::floor(static_cast<double>(box.col_lo) * rx));
  p.x1 = static_cast<std::size_t>(std::ceil(static_cast<double>(box.col_hi + 1) * rx));
  if (p.y1 > img_h) p.y1 = img_h;
  if (p.x1 > img_w) p.x1 = img_w;
  if (p.y0 >= p.y1) p.y0 = p.y1 - 1;
  if (p.x0 >= p.x1) p.x0 = p.x1 - 1;
  return p;
}

inline Tensor crop_pixels(const Tensor& img, const PixelBox& box) {
  if (img.ndim() != 3) throw std::invalid_argument("crop_pixels: image must be [H,W,C]");
  if (box.y1 > img.dim(0) || box.x1 > img.dim(1) || box.y0 >= box.y1 || box.x0 >= box.x1)
    throw std::invalid_argument("crop_pixels: box out of range");
  const std::size_t c = img.dim(2);
  Tensor out({box.y1 - box.y0, box.x1 - box.x0, c});
  for (std::size_t y = box.y0; y < box.y1; ++y)
    for (std::size_t x = box.x0; x < box.x1; ++x)
      for (std::size_t k = 0; k < c; ++k)
        out.at3(y - box.y0, x - box.x0, k) = img.at3(y, x, k);
  return out;
}

}  // namespace fgvc
