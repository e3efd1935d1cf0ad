#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>

#include "fgvc/tensor.hpp"

// Forward operations and their hand-derived backward passes.  All layouts
// are channels-last: images/features [H,W,C], conv kernels [Kh,Kw,Cin,Cout].

namespace fgvc {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k,
                                std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Direct cross-correlation with zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels,
                     std::size_t stride, std::size_t pad) {
  if (input.ndim() != 3 || kernels.ndim() != 4)
    throw std::invalid_argument("conv2d: input must be [H,W,C], kernels [Kh,Kw,Cin,Cout]");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
  const std::size_t kcin = kernels.dim(2), cout = kernels.dim(3);
  if (kcin != cin)
    throw std::invalid_argument("conv2d: kernel input channels do not match input");
  if (stride == 0) throw std::invalid_argument("conv2d: zero stride");
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  const std::size_t oh = conv_out_dim(h, kh, stride, pad);
  const std::size_t ow = conv_out_dim(w, kw, stride, pad);
  Tensor out({oh, ow, cout});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const double* in_px = &input.data[input.idx3(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0)];
          const double* k_px = &kernels.data[kernels.idx4(ky, kx, 0, 0)];
          double* out_px = &out.data[out.idx3(oy, ox, 0)];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double iv = in_px[ci];
            const double* k_row = k_px + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) out_px[co] += iv * k_row[co];
          }
        }
      }
    }
  }
  return out;
}

// Exact gradients of conv2d wrt input and kernels.
inline std::pair<Tensor, Tensor> conv2d_backward(const Tensor& grad_out,
                                                 const Tensor& input,
                                                 const Tensor& kernels,
                                                 std::size_t stride,
                                                 std::size_t pad) {
  if (input.ndim() != 3 || kernels.ndim() != 4 || grad_out.ndim() != 3)
    throw std::invalid_argument("conv2d_backward: bad ranks");
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = kernels.dim(0), kw = kernels.dim(1);
  const std::size_t cout = kernels.dim(3);
  if (kernels.dim(2) != cin)
    throw std::invalid_argument("conv2d_backward: kernel input channels mismatch");
  const std::size_t oh = conv_out_dim(h, kh, stride, pad);
  const std::size_t ow = conv_out_dim(w, kw, stride, pad);
  if (grad_out.dim(0) != oh || grad_out.dim(1) != ow || grad_out.dim(2) != cout)
    throw std::invalid_argument("conv2d_backward: grad_out shape mismatch");

  Tensor grad_input(input.shape);
  Tensor grad_kernels(kernels.shape);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
      const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
      const double* g_px = &grad_out.data[grad_out.idx3(oy, ox, 0)];
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t iy = y0 + static_cast<std::ptrdiff_t>(ky);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::ptrdiff_t ix = x0 + static_cast<std::ptrdiff_t>(kx);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          const std::size_t in_base = input.idx3(static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
          const std::size_t k_base = kernels.idx4(ky, kx, 0, 0);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double iv = input.data[in_base + ci];
            const double* k_row = &kernels.data[k_base + ci * cout];
            double* gk_row = &grad_kernels.data[k_base + ci * cout];
            double gi = 0.0;
            for (std::size_t co = 0; co < cout; ++co) {
              const double g = g_px[co];
              gi += g * k_row[co];
              gk_row[co] += g * iv;
            }
            grad_input.data[in_base + ci] += gi;
          }
        }
      }
    }
  }
  return {std::move(grad_input), std::move(grad_kernels)};
}

// Mean over the spatial grid, per channel: [H,W,C] -> [C].
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("global_avg_pool: input must be [H,W,C]");
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({c});
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < c; ++k) out[k] += x.data[i * c + k];
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t k = 0; k < c; ++k) out[k] *= inv;
  return out;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_out, std::size_t h,
                                       std::size_t w) {
  if (grad_out.ndim() != 1)
    throw std::invalid_argument("global_avg_pool_backward: grad must be [C]");
  const std::size_t c = grad_out.dim(0);
  Tensor g({h, w, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t k = 0; k < c; ++k) g.data[i * c + k] = grad_out[k] * inv;
  return g;
}

// 2x2 average pooling, stride 2.  Odd trailing rows/cols are dropped.
inline Tensor avg_pool2(const Tensor& x) {
  if (x.ndim() != 3) throw std::invalid_argument("avg_pool2: input must be [H,W,C]");
  const std::size_t h = x.dim(0) / 2, w = x.dim(1) / 2, c = x.dim(2);
  if (h == 0 || w == 0) throw std::invalid_argument("avg_pool2: input too small");
  Tensor out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x2 = 0; x2 < w; ++x2)
      for (std::size_t k = 0; k < c; ++k)
        out.at3(y, x2, k) = 0.25 * (x.at3(2 * y, 2 * x2, k) + x.at3(2 * y, 2 * x2 + 1, k) +
                                    x.at3(2 * y + 1, 2 * x2, k) + x.at3(2 * y + 1, 2 * x2 + 1, k));
  return out;
}

inline Tensor avg_pool2_backward(const Tensor& grad_out, std::size_t in_h,
                                 std::size_t in_w) {
  const std::size_t h = grad_out.dim(0), w = grad_out.dim(1), c = grad_out.dim(2);
  Tensor g({in_h, in_w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const double v = 0.25 * grad_out.at3(y, x, k);
        g.at3(2 * y, 2 * x, k) += v;
        g.at3(2 * y, 2 * x + 1, k) += v;
        g.at3(2 * y + 1, 2 * x, k) += v;
        g.at3(2 * y + 1, 2 * x + 1, k) += v;
      }
  return g;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Tensor relu_backward(const Tensor& grad_out, const Tensor& pre) {
  if (!grad_out.same_shape(pre))
    throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (pre.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.ndim() != 3 || bias.ndim() != 1 || bias.dim(0) != x.dim(2))
    throw std::invalid_argument("add_channel_bias: shape mismatch");
  Tensor out = x;
  const std::size_t c = bias.dim(0);
  for (std::size_t i = 0; i < out.size(); i += c)
    for (std::size_t k = 0; k < c; ++k) out.data[i + k] += bias[k];
  return out;
}

inline Tensor channel_bias_backward(const Tensor& grad_out) {
  const std::size_t c = grad_out.dim(grad_out.ndim() - 1);
  Tensor g({c});
  for (std::size_t i = 0; i < grad_out.size(); i += c)
    for (std::size_t k = 0; k < c; ++k) g[k] += grad_out.data[i + k];
  return g;
}

// y = W x + b with W: [out, in].
inline Tensor linear(const Tensor& weights, const Tensor& bias, const Tensor& x) {
  if (weights.ndim() != 2 || x.size() != weights.dim(1) || bias.dim(0) != weights.dim(0))
    throw std::invalid_argument("linear: shape mismatch");
  const std::size_t out_n = weights.dim(0), in_n = weights.dim(1);
  Tensor y({out_n});
  for (std::size_t i = 0; i < out_n; ++i) {
    double acc = bias[i];
    const double* wr = &weights.data[i * in_n];
    for (std::size_t j = 0; j < in_n; ++j) acc += wr[j] * x.data[j];
    y[i] = acc;
  }
  return y;
}

struct LinearGrads {
  Tensor grad_weights;
  Tensor grad_bias;
  Tensor grad_input;
};

inline LinearGrads linear_backward(const Tensor& grad_out, const Tensor& weights,
                                   const Tensor& x) {
  const std::size_t out_n = weights.dim(0), in_n = weights.dim(1);
  if (grad_out.size() != out_n || x.size() != in_n)
    throw std::invalid_argument("linear_backward: shape mismatch");
  LinearGrads g{Tensor(weights.shape), Tensor({out_n}), Tensor(x.shape)};
  for (std::size_t i = 0; i < out_n; ++i) {
    const double go = grad_out[i];
    g.grad_bias[i] = go;
    const double* wr = &weights.data[i * in_n];
    double* gwr = &g.grad_weights.data[i * in_n];
    for (std::size_t j = 0; j < in_n; ++j) {
      gwr[j] = go * x.data[j];
      g.grad_input.data[j] += go * wr[j];
    }
  }
  return g;
}

inline Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  double mx = p.max();
  double sum = 0.0;
  for (double& v : p.data) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p.data) v /= sum;
  return p;
}

struct SoftmaxCrossEntropy {
  double loss;
  Tensor grad;  // d loss / d logits = softmax - onehot
};

// Stabilized by max subtraction; loss = -log softmax(logits)[label].
inline SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits,
                                                 std::size_t label) {
  if (logits.ndim() != 1) throw std::invalid_argument("softmax_cross_entropy: logits must be 1-d");
  const std::size_t k = logits.dim(0);
  if (label >= k) throw std::out_of_range("softmax_cross_entropy: label out of range");
  const double mx = logits.max();
  double sum = 0.0;
  for (double v : logits.data) sum += std::exp(v - mx);
  const double log_sum = std::log(sum);
  SoftmaxCrossEntropy r{(mx + log_sum) - logits[label], Tensor({k})};
  for (std::size_t i = 0; i < k; ++i)
    r.grad[i] = std::exp(logits[i] - mx) / sum - (i == label ? 1.0 : 0.0);
  return r;
}

// Standard bilinear interpolation, align-corners = false.  Output values are
// convex combinations of input samples, so they stay inside [min, max].
inline Tensor bilinear_resize(const Tensor& img, std::size_t out_h,
                              std::size_t out_w) {
  if (img.ndim() != 3) throw std::invalid_argument("bilinear_resize: input must be [H,W,C]");
  if (out_h == 0 || out_w == 0)
    throw std::invalid_argument("bilinear_resize: zero output dimension");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t k = 0; k < c; ++k) {
        const double top = img.at3(y0, x0, k) * (1.0 - wx) + img.at3(y0, x1, k) * wx;
        const double bot = img.at3(y1, x0, k) * (1.0 - wx) + img.at3(y1, x1, k) * wx;
        out.at3(oy, ox, k) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace fgvc
