#pragma once

#include <stdexcept>

#include "fgvc/attention.hpp"
#include "fgvc/ops.hpp"
#include "fgvc/rng.hpp"
#include "fgvc/tensor.hpp"

// Attention-guided augmentation: crop zooms into the high-attention region,
// drop erases it.  Both are deterministic given (image, map, config); the
// only randomness is which attention map gets selected.

namespace fgvc {

struct AugmentConfig {
  double theta_crop = 0.5;
  double theta_drop = 0.5;
  enum class Selection { uniform, weighted } selection = Selection::weighted;

  void validate() const {
    if (!(theta_crop > 0.0 && theta_crop < 1.0))
      throw std::invalid_argument("augment: theta_crop must lie in (0,1)");
    if (!(theta_drop > 0.0 && theta_drop < 1.0))
      throw std::invalid_argument("augment: theta_drop must lie in (0,1)");
  }
};

// Uniform: k ~ U{0..M-1}.  Weighted: P(k) proportional to mean(A_k), falling
// back to uniform when every map is zero.
inline std::size_t select_attention_map(const Tensor& attention, Rng& rng,
                                        AugmentConfig::Selection mode) {
  if (attention.ndim() != 3)
    throw std::invalid_argument("select_attention_map: attention must be [H,W,M]");
  const std::size_t m = attention.dim(2);
  if (mode == AugmentConfig::Selection::uniform)
    return static_cast<std::size_t>(rng.uniform_int(m));

  std::vector<double> mass(m, 0.0);
  const std::size_t hw = attention.dim(0) * attention.dim(1);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t k = 0; k < m; ++k) mass[k] += attention.data[i * m + k];
  double total = 0.0;
  for (double v : mass) total += v;
  if (total <= 0.0) return static_cast<std::size_t>(rng.uniform_int(m));
  const double u = rng.uniform_f64() * total;
  double acc = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    acc += mass[k];
    if (u < acc) return k;
  }
  return m - 1;
}

inline Tensor attention_map_slice(const Tensor& attention, std::size_t k) {
  const std::size_t h = attention.dim(0), w = attention.dim(1);
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at2(y, x) = attention.at3(y, x, k);
  return out;
}

// Zoom into the thresholded attention region: box in feature coordinates,
// scaled outward to pixels, cropped and resized back to the input size.
inline Tensor attention_crop(const Tensor& image, const Tensor& map,
                             const AugmentConfig& cfg) {
  cfg.validate();
  if (image.ndim() != 3 || map.ndim() != 2)
    throw std::invalid_argument("attention_crop: image must be [S,S,C], map [H,W]");
  Tensor norm = normalize_map01(map);
  BoundingBox box = attention_bbox(norm, cfg.theta_crop);
  PixelBox pb = scale_box_to_image(box, map.dim(0), map.dim(1), image.dim(0), image.dim(1));
  return bilinear_resize(crop_pixels(image, pb), image.dim(0), image.dim(1));
}

// Erase every pixel whose (nearest-neighbor upsampled) attention exceeds the
// drop threshold; all other pixels pass through untouched.
inline Tensor attention_drop(const Tensor& image, const Tensor& map,
                             const AugmentConfig& cfg) {
  cfg.validate();
  if (image.ndim() != 3 || map.ndim() != 2)
    throw std::invalid_argument("attention_drop: image must be [S,S,C], map [H,W]");
  Tensor norm = normalize_map01(map);
  const std::size_t ih = image.dim(0), iw = image.dim(1), c = image.dim(2);
  const std::size_t mh = map.dim(0), mw = map.dim(1);
  Tensor out = image;
  for (std::size_t y = 0; y < ih; ++y) {
    const std::size_t my = std::min(y * mh / ih, mh - 1);
    for (std::size_t x = 0; x < iw; ++x) {
      const std::size_t mx = std::min(x * mw / iw, mw - 1);
      if (norm.at2(my, mx) > cfg.theta_drop)
        for (std::size_t k = 0; k < c; ++k) out.at3(y, x, k) = 0.0;
    }
  }
  return out;
}

}  // namespace fgvc
