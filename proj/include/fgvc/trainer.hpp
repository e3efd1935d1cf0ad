#pragma once

#include <atomic>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fgvc/augment.hpp"
#include "fgvc/dataset.hpp"
#include "fgvc/model.hpp"
#include "fgvc/ops.hpp"
#include "fgvc/rng.hpp"

// Training loop: three-stream cross-entropy (raw / attention-crop /
// attention-drop), attention regularization against moving-average part
// centers, SGD with momentum and stepped exponential learning-rate decay.

namespace fgvc {

struct TrainConfig {
  std::size_t epochs = 80;
  std::size_t batch_size = 12;
  double base_lr = 0.001;
  double momentum = 0.9;
  double lr_decay = 0.8;
  std::size_t decay_interval = 2;  // epochs between decay steps
  double beta = 0.05;              // center moving-average rate
  double lambda_attention = 1.0;   // weight of the regularization loss
  std::uint64_t seed = 0;
  bool augment = true;
  bool freeze_backbone = false;
  std::size_t threads = 1;
  AugmentConfig aug;
  ModelConfig model;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (base_lr < 0.0) throw std::invalid_argument("train: negative learning rate");
    if (momentum < 0.0 || momentum >= 1.0)
      throw std::invalid_argument("train: momentum must lie in [0,1)");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
      throw std::invalid_argument("train: decay must lie in (0,1]");
    if (decay_interval < 1) throw std::invalid_argument("train: decay interval must be >= 1");
    if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("train: beta must lie in [0,1]");
    if (lambda_attention < 0.0) throw std::invalid_argument("train: negative lambda");
    aug.validate();
    model.validate();
  }
};

// lr = base * decay^floor(epoch / interval), computed by repeated
// multiplication so the schedule reproduces the decimal values exactly.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  double lr = cfg.base_lr;
  const std::size_t steps = epoch / cfg.decay_interval;
  for (std::size_t i = 0; i < steps; ++i) lr *= cfg.lr_decay;
  return lr;
}

// Per-class moving-average part-feature centers, initialized to zero.
struct CenterBank {
  Tensor centers;  // [K, M, C]

  CenterBank() = default;
  CenterBank(std::size_t classes, std::size_t maps, std::size_t channels)
      : centers({classes, maps, channels}) {}

  std::size_t classes() const { return centers.dim(0); }

  Tensor for_class(std::size_t y) const {
    if (y >= classes()) throw std::out_of_range("center bank: class out of range");
    const std::size_t m = centers.dim(1), c = centers.dim(2);
    Tensor out({m, c});
    std::copy(&centers.data[y * m * c], &centers.data[(y + 1) * m * c],
              out.data.begin());
    return out;
  }
};

struct RegLoss {
  double loss = 0.0;
  Tensor grad;  // d loss / d parts = 2 (parts - centers)
};

// Squared distance between the part matrix and its class centers; the
// centers are constants here (no gradient flows into the bank).
inline RegLoss attention_reg_loss(const Tensor& parts, const Tensor& centers) {
  if (!parts.same_shape(centers))
    throw std::invalid_argument("attention_reg_loss: shape mismatch");
  RegLoss r;
  r.grad = Tensor(parts.shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double d = parts.data[i] - centers.data[i];
    r.loss += d * d;
    r.grad.data[i] = 2.0 * d;
  }
  return r;
}

// c_y <- c_y + beta * (parts - c_y); other classes untouched.
inline void update_centers(CenterBank& bank, std::size_t y, const Tensor& parts,
                           double beta) {
  if (y >= bank.classes()) throw std::out_of_range("update_centers: class out of range");
  const std::size_t m = bank.centers.dim(1), c = bank.centers.dim(2);
  if (parts.ndim() != 2 || parts.dim(0) != m || parts.dim(1) != c)
    throw std::invalid_argument("update_centers: parts shape mismatch");
  double* row = &bank.centers.data[y * m * c];
  for (std::size_t i = 0; i < m * c; ++i) row[i] += beta * (parts.data[i] - row[i]);
}

namespace detail {

template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      f(i);
    }
  };
  const std::size_t spawn = std::min(threads, n) - 1;
  std::vector<std::thread> pool;
  pool.reserve(spawn);
  for (std::size_t t = 0; t < spawn; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

template <class A, class B, class F>
void zip_params(A& a, B& b, F&& f) {
  f(a.conv1_w, b.conv1_w);
  f(a.conv1_b, b.conv1_b);
  f(a.conv2_w, b.conv2_w);
  f(a.conv2_b, b.conv2_b);
  f(a.conv3_w, b.conv3_w);
  f(a.conv3_b, b.conv3_b);
  f(a.attn_w, b.attn_w);
  f(a.fc_w, b.fc_w);
  f(a.fc_b, b.fc_b);
}

inline void add_scaled(ModelGrads& acc, const ModelGrads& g, double s) {
  zip_params(acc, g, [s](Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += s * b.data[i];
  });
}

inline std::size_t argmax(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v.data[i] > v.data[best]) best = i;
  return best;
}

}  // namespace detail

struct TrainState {
  ModelParams params;
  ModelGrads velocity;
  CenterBank centers;
  std::size_t epoch = 0;
  Rng rng;                        // parent of the per-image augmentation streams
  std::uint64_t images_seen = 0;  // stream counter, advances per image

  TrainState() : rng(0) {}
};

struct StepStats {
  double loss_sum = 0.0;
  double ce_sum = 0.0;
  double la_sum = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

// One SGD step over a batch.  Per image: raw forward; crop and drop images
// built from the raw pass's attention (constants to the gradient); three-way
// averaged cross-entropy plus the attention regularizer on the raw parts.
// Losses see the batch-start centers; the bank advances per image, in batch
// order, afterwards.
inline StepStats train_step(TrainState& st, const std::vector<const Tensor*>& images,
                            const std::vector<std::size_t>& labels, double lr,
                            const TrainConfig& cfg) {
  if (images.empty() || images.size() != labels.size())
    throw std::invalid_argument("train_step: empty or mismatched batch");
  const std::size_t n = images.size();
  const std::size_t k_classes = st.params.cfg.classes;
  for (std::size_t y : labels)
    if (y >= k_classes) throw std::out_of_range("train_step: label out of range");

  struct ItemResult {
    ModelGrads grads;
    Tensor parts;
    double loss = 0.0, ce = 0.0, la = 0.0;
    bool correct = false;
  };
  std::vector<ItemResult> items(n);

  detail::parallel_for(n, cfg.threads, [&](std::size_t i) {
    const Tensor& img = *images[i];
    const std::size_t y = labels[i];
    Rng stream = st.rng.split(st.images_seen + i);

    ForwardTrace raw = forward_trace(st.params, img);
    SoftmaxCrossEntropy ce_raw = softmax_cross_entropy(raw.logits, y);
    ItemResult& out = items[i];
    out.correct = detail::argmax(raw.logits) == y;
    out.parts = raw.parts;

    RegLoss reg = attention_reg_loss(raw.parts, st.centers.for_class(y));
    Tensor grad_parts(reg.grad.shape);
    for (std::size_t j = 0; j < grad_parts.size(); ++j)
      grad_parts.data[j] = cfg.lambda_attention * reg.grad.data[j];

    if (cfg.augment) {
      const std::size_t k_crop =
          select_attention_map(raw.attention, stream, cfg.aug.selection);
      const std::size_t k_drop =
          select_attention_map(raw.attention, stream, cfg.aug.selection);
      Tensor crop_img =
          attention_crop(img, attention_map_slice(raw.attention, k_crop), cfg.aug);
      Tensor drop_img =
          attention_drop(img, attention_map_slice(raw.attention, k_drop), cfg.aug);
      ForwardTrace crop = forward_trace(st.params, crop_img);
      ForwardTrace drop = forward_trace(st.params, drop_img);
      SoftmaxCrossEntropy ce_crop = softmax_cross_entropy(crop.logits, y);
      SoftmaxCrossEntropy ce_drop = softmax_cross_entropy(drop.logits, y);

      out.ce = (ce_raw.loss + ce_crop.loss + ce_drop.loss) / 3.0;
      const double third = 1.0 / 3.0;
      for (double& v : ce_raw.grad.data) v *= third;
      for (double& v : ce_crop.grad.data) v *= third;
      for (double& v : ce_drop.grad.data) v *= third;
      out.grads = backward(st.params, raw, ce_raw.grad, grad_parts);
      detail::add_scaled(out.grads, backward(st.params, crop, ce_crop.grad, Tensor()), 1.0);
      detail::add_scaled(out.grads, backward(st.params, drop, ce_drop.grad, Tensor()), 1.0);
    } else {
      out.ce = ce_raw.loss;
      out.grads = backward(st.params, raw, ce_raw.grad, grad_parts);
    }
    out.la = reg.loss;
    out.loss = out.ce + cfg.lambda_attention * out.la;
  });

  // Mean gradient over the batch, summed in fixed index order.
  ModelGrads total = zero_grads(st.params);
  const double inv_n = 1.0 / static_cast<double>(n);
  StepStats stats;
  for (std::size_t i = 0; i < n; ++i) {
    detail::add_scaled(total, items[i].grads, inv_n);
    stats.loss_sum += items[i].loss;
    stats.ce_sum += items[i].ce;
    stats.la_sum += items[i].la;
    stats.correct += items[i].correct ? 1 : 0;
  }
  stats.count = n;

  if (cfg.freeze_backbone) {
    for (Tensor* t : {&total.conv1_w, &total.conv1_b, &total.conv2_w,
                      &total.conv2_b, &total.conv3_w, &total.conv3_b})
      std::fill(t->data.begin(), t->data.end(), 0.0);
  }

  // v <- momentum v - lr g; p <- p + v.
  detail::zip_params(st.velocity, total, [&](Tensor& v, const Tensor& g) {
    for (std::size_t i = 0; i < v.size(); ++i)
      v.data[i] = cfg.momentum * v.data[i] - lr * g.data[i];
  });
  detail::zip_params(st.params, st.velocity, [](Tensor& p, const Tensor& v) {
    for (std::size_t i = 0; i < p.size(); ++i) p.data[i] += v.data[i];
  });

  for (std::size_t i = 0; i < n; ++i)
    update_centers(st.centers, labels[i], items[i].parts, cfg.beta);
  st.images_seen += n;
  return stats;
}

struct EvalResult {
  double acc_single = 0.0;  // argmax of the full-image probabilities
  double acc_two_pass = 0.0;
};

inline EvalResult evaluate(const ModelParams& params, const LabeledDataset& ds,
                           std::size_t threads = 1) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<char> ok1(ds.size()), ok2(ds.size());
  detail::parallel_for(ds.size(), threads, [&](std::size_t i) {
    TwoPassResult r = predict_two_pass(params, ds.images[i]);
    ok1[i] = detail::argmax(r.p1) == ds.labels[i];
    ok2[i] = detail::argmax(r.p) == ds.labels[i];
  });
  EvalResult r;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    r.acc_single += ok1[i];
    r.acc_two_pass += ok2[i];
  }
  r.acc_single /= static_cast<double>(ds.size());
  r.acc_two_pass /= static_cast<double>(ds.size());
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double ce_loss = 0.0;
  double la_loss = 0.0;
  double train_acc = 0.0;
  double eval_acc_1pass = 0.0;
  double eval_acc_2pass = 0.0;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,lr,train_loss,ce_loss,la_loss,train_acc,eval_acc_1pass,eval_acc_2pass\n";
  for (const auto& r : rows)
    os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.ce_loss << ","
       << r.la_loss << "," << r.train_acc << "," << r.eval_acc_1pass << ","
       << r.eval_acc_2pass << "\n";
  return os.str();
}

struct TrainResult {
  TrainState state;
  std::vector<EpochMetrics> metrics;
};

// Full training run: seeded init (unless warm-started), seeded per-epoch
// shuffling, one evaluation per epoch.  Deterministic given (seed, config,
// data) regardless of the thread count.
inline TrainResult train(const TrainConfig& cfg, const LabeledDataset& train_ds,
                         const LabeledDataset& eval_ds,
                         const ModelParams* warm_start = nullptr,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (train_ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  ModelConfig mc = cfg.model;
  mc.classes = train_ds.n_classes();
  for (std::size_t y : train_ds.labels)
    if (y >= mc.classes) throw std::invalid_argument("train: label out of range");

  Rng master(cfg.seed);
  TrainResult result;
  TrainState& st = result.state;
  if (warm_start) {
    if (warm_start->cfg.resolution != mc.resolution)
      throw std::invalid_argument("train: warm start resolution mismatch");
    st.params = *warm_start;
    if (warm_start->cfg.classes != mc.classes) {
      // Fresh classifier head when the class count changes.
      Rng head_rng = master.split(11);
      st.params.fc_w = detail::glorot_uniform(
          {mc.classes, mc.attention_maps * mc.feature_channels},
          mc.attention_maps * mc.feature_channels, mc.classes, head_rng);
      st.params.fc_b = Tensor({mc.classes});
      st.params.cfg.classes = mc.classes;
    }
    mc = st.params.cfg;
  } else {
    Rng init_rng = master.split(1);
    st.params = init_params(mc, init_rng);
  }
  st.velocity = zero_grads(st.params);
  st.centers = CenterBank(mc.classes, mc.attention_maps, mc.feature_channels);
  st.rng = master.split(2);

  std::vector<std::size_t> order(train_ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    st.epoch = epoch;
    const double lr = lr_at(epoch, cfg);

    Rng shuffle_rng = master.split(100 + epoch);
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(i));
      std::swap(order[i - 1], order[j]);
    }

    StepStats epoch_stats;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, order.size());
      std::vector<const Tensor*> images;
      std::vector<std::size_t> labels;
      images.reserve(end - begin);
      labels.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        images.push_back(&train_ds.images[order[i]]);
        labels.push_back(train_ds.labels[order[i]]);
      }
      StepStats s = train_step(st, images, labels, lr, cfg);
      epoch_stats.loss_sum += s.loss_sum;
      epoch_stats.ce_sum += s.ce_sum;
      epoch_stats.la_sum += s.la_sum;
      epoch_stats.correct += s.correct;
      epoch_stats.count += s.count;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    const double inv = 1.0 / static_cast<double>(epoch_stats.count);
    m.train_loss = epoch_stats.loss_sum * inv;
    m.ce_loss = epoch_stats.ce_sum * inv;
    m.la_loss = epoch_stats.la_sum * inv;
    m.train_acc = static_cast<double>(epoch_stats.correct) * inv;
    if (eval_ds.size() > 0) {
      EvalResult e = evaluate(st.params, eval_ds, cfg.threads);
      m.eval_acc_1pass = e.acc_single;
      m.eval_acc_2pass = e.acc_two_pass;
    }
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace fgvc
