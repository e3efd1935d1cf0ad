#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>

#include "fgvc/attention.hpp"
#include "fgvc/ops.hpp"
#include "fgvc/rng.hpp"
#include "fgvc/tensor.hpp"

// The attention network at desk scale: a three-block conv backbone, a 1x1
// attention head, bilinear attention pooling and a linear classifier, plus
// the two-pass crop-and-refine prediction.

namespace fgvc {

struct ModelConfig {
  std::size_t resolution = 64;       // input side; must be divisible by 8
  std::size_t channels1 = 8;         // backbone block widths
  std::size_t channels2 = 16;
  std::size_t feature_channels = 32; // C
  std::size_t attention_maps = 8;    // M
  std::size_t classes = 8;           // K

  std::size_t feature_side() const { return resolution / 8; }

  void validate() const {
    if (resolution == 0 || resolution % 8 != 0)
      throw std::invalid_argument("model: resolution must be a positive multiple of 8");
    if (channels1 == 0 || channels2 == 0 || feature_channels == 0 ||
        attention_maps == 0 || classes == 0)
      throw std::invalid_argument("model: all widths must be positive");
  }
};

struct ModelParams {
  ModelConfig cfg;
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor conv3_w, conv3_b;
  Tensor attn_w;          // 1x1, feature_channels -> attention_maps, no bias
  Tensor fc_w, fc_b;      // [K, M*C], [K]
};

// Gradient (or momentum) buffers, one per trainable tensor.
struct ModelGrads {
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor conv3_w, conv3_b;
  Tensor attn_w;
  Tensor fc_w, fc_b;
};

// Visits every trainable tensor exactly once, in a fixed order.
template <class P, class F>
void for_each_param(P& p, F&& f) {
  f("conv1_w", p.conv1_w);
  f("conv1_b", p.conv1_b);
  f("conv2_w", p.conv2_w);
  f("conv2_b", p.conv2_b);
  f("conv3_w", p.conv3_w);
  f("conv3_b", p.conv3_b);
  f("attn_w", p.attn_w);
  f("fc_w", p.fc_w);
  f("fc_b", p.fc_b);
}

inline ModelGrads zero_grads(const ModelParams& p) {
  ModelGrads g;
  g.conv1_w = Tensor(p.conv1_w.shape);
  g.conv1_b = Tensor(p.conv1_b.shape);
  g.conv2_w = Tensor(p.conv2_w.shape);
  g.conv2_b = Tensor(p.conv2_b.shape);
  g.conv3_w = Tensor(p.conv3_w.shape);
  g.conv3_b = Tensor(p.conv3_b.shape);
  g.attn_w = Tensor(p.attn_w.shape);
  g.fc_w = Tensor(p.fc_w.shape);
  g.fc_b = Tensor(p.fc_b.shape);
  return g;
}

namespace detail {

inline Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in,
                             std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  const std::size_t c1 = cfg.channels1, c2 = cfg.channels2;
  const std::size_t fc = cfg.feature_channels, m = cfg.attention_maps;
  const std::size_t k = cfg.classes;
  p.conv1_w = detail::glorot_uniform({3, 3, 3, c1}, 9 * 3, 9 * c1, rng);
  p.conv1_b = Tensor({c1});
  p.conv2_w = detail::glorot_uniform({3, 3, c1, c2}, 9 * c1, 9 * c2, rng);
  p.conv2_b = Tensor({c2});
  p.conv3_w = detail::glorot_uniform({3, 3, c2, fc}, 9 * c2, 9 * fc, rng);
  p.conv3_b = Tensor({fc});
  p.attn_w = detail::glorot_uniform({1, 1, fc, m}, fc, m, rng);
  p.fc_w = detail::glorot_uniform({k, m * fc}, m * fc, k, rng);
  p.fc_b = Tensor({k});
  return p;
}

// Forward-pass bundle: feature maps F, attention maps A (>= 0), the
// normalized part-feature matrix P (M x C) and classifier logits.
struct AttentionPack {
  Tensor features;   // [Hf, Wf, C]
  Tensor attention;  // [Hf, Wf, M]
  Tensor parts;      // [M, C]
  Tensor logits;     // [K]
};

// Everything the backward pass needs from a forward run.
struct ForwardTrace {
  Tensor input;
  Tensor pre1, act1, pool1;
  Tensor pre2, act2, pool2;
  Tensor pre3, act3, features;
  Tensor attn_pre, attention;
  Tensor parts_raw;     // pooled A_k * F before normalization
  Tensor parts_ssqrt;   // signed sqrt of parts_raw
  Tensor parts;         // row-L2-normalized
  Tensor logits;
};

constexpr double kSignedSqrtEps = 1e-12;

struct BapTrace {
  Tensor raw;
  Tensor ssqrt;
  Tensor parts;
};

inline BapTrace bilinear_attention_pool_trace(const Tensor& features,
                                              const Tensor& attention) {
  if (features.ndim() != 3 || attention.ndim() != 3 ||
      features.dim(0) != attention.dim(0) || features.dim(1) != attention.dim(1))
    throw std::invalid_argument("bilinear_attention_pool: spatial dims mismatch");
  const std::size_t h = features.dim(0), w = features.dim(1);
  const std::size_t c = features.dim(2), m = attention.dim(2);
  BapTrace t;
  t.raw = Tensor({m, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double* a = &attention.data[attention.idx3(y, x, 0)];
      const double* f = &features.data[features.idx3(y, x, 0)];
      for (std::size_t k = 0; k < m; ++k) {
        double* row = &t.raw.data[k * c];
        const double av = a[k];
        for (std::size_t j = 0; j < c; ++j) row[j] += av * f[j];
      }
    }
  for (double& v : t.raw.data) v *= inv;

  t.ssqrt = Tensor({m, c});
  for (std::size_t i = 0; i < t.raw.size(); ++i) {
    const double v = t.raw.data[i];
    const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    t.ssqrt.data[i] = s * std::sqrt(std::fabs(v) + kSignedSqrtEps);
  }

  t.parts = t.ssqrt;
  for (std::size_t k = 0; k < m; ++k) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) norm2 += t.ssqrt.at2(k, j) * t.ssqrt.at2(k, j);
    if (norm2 > 0.0) {
      const double inv_n = 1.0 / std::sqrt(norm2);
      for (std::size_t j = 0; j < c; ++j) t.parts.at2(k, j) *= inv_n;
    }
  }
  return t;
}

// Part features: per map, spatially pool A_k (element-wise *) F, then signed
// square root and row L2 normalization (zero rows stay zero).
inline Tensor bilinear_attention_pool(const Tensor& features,
                                      const Tensor& attention) {
  return bilinear_attention_pool_trace(features, attention).parts;
}

inline ForwardTrace forward_trace(const ModelParams& p, const Tensor& image) {
  const std::size_t s = p.cfg.resolution;
  if (image.ndim() != 3 || image.dim(0) != s || image.dim(1) != s || image.dim(2) != 3)
    throw std::invalid_argument("forward: image must be [S,S,3] at the configured resolution");
  ForwardTrace t;
  t.input = image;
  t.pre1 = add_channel_bias(conv2d(image, p.conv1_w, 1, 1), p.conv1_b);
  t.act1 = relu(t.pre1);
  t.pool1 = avg_pool2(t.act1);
  t.pre2 = add_channel_bias(conv2d(t.pool1, p.conv2_w, 1, 1), p.conv2_b);
  t.act2 = relu(t.pre2);
  t.pool2 = avg_pool2(t.act2);
  t.pre3 = add_channel_bias(conv2d(t.pool2, p.conv3_w, 1, 1), p.conv3_b);
  t.act3 = relu(t.pre3);
  t.features = avg_pool2(t.act3);
  t.attn_pre = conv2d(t.features, p.attn_w, 1, 0);
  t.attention = relu(t.attn_pre);
  BapTrace bap = bilinear_attention_pool_trace(t.features, t.attention);
  t.parts_raw = std::move(bap.raw);
  t.parts_ssqrt = std::move(bap.ssqrt);
  t.parts = std::move(bap.parts);
  Tensor flat({t.parts.size()}, t.parts.data);
  t.logits = linear(p.fc_w, p.fc_b, flat);
  return t;
}

inline AttentionPack forward(const ModelParams& p, const Tensor& image) {
  ForwardTrace t = forward_trace(p, image);
  return AttentionPack{std::move(t.features), std::move(t.attention),
                       std::move(t.parts), std::move(t.logits)};
}

// Backward through classifier, BAP (including signed sqrt and row
// normalization), attention head and backbone.  grad_parts_extra is an
// additional gradient on the normalized part matrix (the attention
// regularizer enters here); pass an empty tensor when absent.
inline ModelGrads backward(const ModelParams& p, const ForwardTrace& t,
                           const Tensor& grad_logits,
                           const Tensor& grad_parts_extra) {
  const std::size_t m = p.cfg.attention_maps, c = p.cfg.feature_channels;
  ModelGrads g = zero_grads(p);

  Tensor flat({t.parts.size()}, t.parts.data);
  LinearGrads lg = linear_backward(grad_logits, p.fc_w, flat);
  g.fc_w = std::move(lg.grad_weights);
  g.fc_b = std::move(lg.grad_bias);

  Tensor grad_parts({m, c}, lg.grad_input.data);
  if (grad_parts_extra.size() > 0) {
    if (!grad_parts_extra.same_shape(grad_parts))
      throw std::invalid_argument("backward: grad_parts_extra shape mismatch");
    for (std::size_t i = 0; i < grad_parts.size(); ++i)
      grad_parts.data[i] += grad_parts_extra.data[i];
  }

  // Row normalization backward: p = s/|s|, d s = (g - p (p.g)) / |s|.
  Tensor grad_ssqrt({m, c});
  for (std::size_t k = 0; k < m; ++k) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      norm2 += t.parts_ssqrt.at2(k, j) * t.parts_ssqrt.at2(k, j);
    if (norm2 <= 0.0) continue;  // zero row stays zero, no gradient
    const double inv_n = 1.0 / std::sqrt(norm2);
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += t.parts.at2(k, j) * grad_parts.at2(k, j);
    for (std::size_t j = 0; j < c; ++j)
      grad_ssqrt.at2(k, j) = (grad_parts.at2(k, j) - t.parts.at2(k, j) * dot) * inv_n;
  }

  // Signed sqrt backward: d/dx sign(x) sqrt(|x|+eps) = 1 / (2 sqrt(|x|+eps)).
  Tensor grad_raw({m, c});
  for (std::size_t i = 0; i < grad_raw.size(); ++i) {
    const double d = 0.5 / std::sqrt(std::fabs(t.parts_raw.data[i]) + kSignedSqrtEps);
    grad_raw.data[i] = grad_ssqrt.data[i] * d;
  }

  // Pooled product backward: raw[k,j] = mean_hw A[.,k] * F[.,j].
  const std::size_t fh = t.features.dim(0), fw = t.features.dim(1);
  const double inv_hw = 1.0 / static_cast<double>(fh * fw);
  Tensor grad_features(t.features.shape);
  Tensor grad_attention(t.attention.shape);
  for (std::size_t y = 0; y < fh; ++y)
    for (std::size_t x = 0; x < fw; ++x) {
      const double* a = &t.attention.data[t.attention.idx3(y, x, 0)];
      const double* f = &t.features.data[t.features.idx3(y, x, 0)];
      double* ga = &grad_attention.data[grad_attention.idx3(y, x, 0)];
      double* gf = &grad_features.data[grad_features.idx3(y, x, 0)];
      for (std::size_t k = 0; k < m; ++k) {
        const double* gr = &grad_raw.data[k * c];
        double acc_a = 0.0;
        const double av = a[k];
        for (std::size_t j = 0; j < c; ++j) {
          acc_a += gr[j] * f[j];
          gf[j] += gr[j] * av;
        }
        ga[k] = acc_a * inv_hw;
      }
    }
  for (double& v : grad_features.data) v *= inv_hw;

  // Attention head: A = relu(1x1 conv of F), F also feeds the pooling.
  Tensor grad_attn_pre = relu_backward(grad_attention, t.attn_pre);
  auto [gf_attn, g_attn_w] = conv2d_backward(grad_attn_pre, t.features, p.attn_w, 1, 0);
  g.attn_w = std::move(g_attn_w);
  for (std::size_t i = 0; i < grad_features.size(); ++i)
    grad_features.data[i] += gf_attn.data[i];

  // Backbone blocks, last to first: pool <- relu <- conv.
  Tensor gp = avg_pool2_backward(grad_features, t.act3.dim(0), t.act3.dim(1));
  gp = relu_backward(gp, t.pre3);
  g.conv3_b = channel_bias_backward(gp);
  auto [gi3, gk3] = conv2d_backward(gp, t.pool2, p.conv3_w, 1, 1);
  g.conv3_w = std::move(gk3);

  gp = avg_pool2_backward(gi3, t.act2.dim(0), t.act2.dim(1));
  gp = relu_backward(gp, t.pre2);
  g.conv2_b = channel_bias_backward(gp);
  auto [gi2, gk2] = conv2d_backward(gp, t.pool1, p.conv2_w, 1, 1);
  g.conv2_w = std::move(gk2);

  gp = avg_pool2_backward(gi2, t.act1.dim(0), t.act1.dim(1));
  gp = relu_backward(gp, t.pre1);
  g.conv1_b = channel_bias_backward(gp);
  auto [gi1, gk1] = conv2d_backward(gp, t.input, p.conv1_w, 1, 1);
  g.conv1_w = std::move(gk1);
  (void)gi1;

  return g;
}

struct TwoPassResult {
  Tensor p;       // 0.5 * (p1 + p2)
  Tensor p1;      // softmax over the full image
  Tensor p2;      // softmax over the attention crop
  BoundingBox box;
};

// Coarse pass, object-map bounding box, zoomed fine pass, averaged result.
// A degenerate attention map falls back to the full-image box.
inline TwoPassResult predict_two_pass(const ModelParams& params,
                                      const Tensor& image,
                                      double theta = 0.5) {
  ForwardTrace t = forward_trace(params, image);
  TwoPassResult r;
  r.p1 = softmax(t.logits);
  Tensor om = object_map(t.attention);
  r.box = attention_bbox(om, theta);
  PixelBox pb = scale_box_to_image(r.box, om.dim(0), om.dim(1), image.dim(0), image.dim(1));
  Tensor zoom = bilinear_resize(crop_pixels(image, pb), image.dim(0), image.dim(1));
  r.p2 = softmax(forward_trace(params, zoom).logits);
  r.p = Tensor(r.p1.shape);
  for (std::size_t i = 0; i < r.p.size(); ++i)
    r.p[i] = 0.5 * (r.p1[i] + r.p2[i]);
  return r;
}

// ---- checkpoint directory: manifest + one TDF per parameter tensor ----

inline void save_checkpoint(const std::string& dir, const ModelParams& params,
                            std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "manifest.txt");
  if (!os) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  os << "version=1\n";
  os << "M=" << params.cfg.attention_maps << "\n";
  os << "C=" << params.cfg.feature_channels << "\n";
  os << "K=" << params.cfg.classes << "\n";
  os << "resolution=" << params.cfg.resolution << "\n";
  os << "seed=" << seed << "\n";
  for_each_param(const_cast<ModelParams&>(params), [&](const char* name, Tensor& t) {
    write_tdf((fs::path(dir) / (std::string(name) + ".tdf")).string(), t);
  });
}

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
};

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.txt");
  if (!is) throw std::runtime_error("checkpoint: missing manifest in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"version", "M", "C", "K", "resolution", "seed"})
    if (!kv.count(key))
      throw std::runtime_error(std::string("checkpoint: manifest missing key ") + key);
  if (kv["version"] != "1")
    throw std::runtime_error("checkpoint: unsupported version " + kv["version"]);

  Checkpoint ck;
  ck.seed = std::stoull(kv["seed"]);
  ModelParams& p = ck.params;
  for_each_param(p, [&](const char* name, Tensor& t) {
    t = read_tdf((fs::path(dir) / (std::string(name) + ".tdf")).string());
  });

  ModelConfig cfg;
  cfg.resolution = std::stoull(kv["resolution"]);
  cfg.attention_maps = std::stoull(kv["M"]);
  cfg.feature_channels = std::stoull(kv["C"]);
  cfg.classes = std::stoull(kv["K"]);
  if (p.conv1_w.ndim() != 4 || p.conv1_w.dim(2) != 3)
    throw std::runtime_error("checkpoint: conv1_w must take 3 input channels");
  cfg.channels1 = p.conv1_w.dim(3);
  cfg.channels2 = p.conv2_w.dim(3);
  cfg.validate();

  auto expect = [&](const char* name, const Tensor& t, std::vector<std::size_t> shape) {
    if (t.shape != shape) {
      std::ostringstream msg;
      msg << "checkpoint: " << name << " shape does not match manifest";
      throw std::runtime_error(msg.str());
    }
  };
  expect("conv1_w", p.conv1_w, {3, 3, 3, cfg.channels1});
  expect("conv1_b", p.conv1_b, {cfg.channels1});
  expect("conv2_w", p.conv2_w, {3, 3, cfg.channels1, cfg.channels2});
  expect("conv2_b", p.conv2_b, {cfg.channels2});
  expect("conv3_w", p.conv3_w, {3, 3, cfg.channels2, cfg.feature_channels});
  expect("conv3_b", p.conv3_b, {cfg.feature_channels});
  expect("attn_w", p.attn_w, {1, 1, cfg.feature_channels, cfg.attention_maps});
  expect("fc_w", p.fc_w, {cfg.classes, cfg.attention_maps * cfg.feature_channels});
  expect("fc_b", p.fc_b, {cfg.classes});
  p.cfg = cfg;
  return ck;
}

}  // namespace fgvc
