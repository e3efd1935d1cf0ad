#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fgvc/image_io.hpp"
#include "fgvc/model.hpp"
#include "fgvc/ops.hpp"
#include "fgvc/rng.hpp"
#include "fgvc/tensor.hpp"

// Dataset ingestion (PPM + labels.csv manifests) and a seeded synthetic
// fine-grained generator: bird-like composites whose classes differ only in
// subtle part attributes while pose, position, scale and background vary
// freely within a class.

namespace fgvc {

struct LabeledDataset {
  std::vector<Tensor> images;          // [S,S,3], values in [0,1]
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  std::string split;                   // "train" or "test"

  std::size_t size() const { return images.size(); }
  std::size_t n_classes() const { return class_names.size(); }
};

struct SynthConfig {
  std::size_t n_classes = 8;
  std::size_t per_class_train = 25;
  std::size_t per_class_test = 12;
  std::size_t size = 64;
  std::uint64_t seed = 7;
  // Shifts every class's part-attribute center (and tints the body) by the
  // same amount: a whole dataset family moved away from the shift-0 family.
  double family_shift = 0.0;
};

namespace synth {

struct ClassAttributes {
  double beak_aspect;  // length/width ratio of the beak mark
  double wing_angle;   // wing direction relative to the body axis
};

inline ClassAttributes class_attributes(const SynthConfig& cfg, std::size_t cls) {
  const double t = cfg.n_classes > 1
                       ? static_cast<double>(cls) / static_cast<double>(cfg.n_classes - 1)
                       : 0.0;
  ClassAttributes a;
  a.beak_aspect = 0.9 + 2.6 * t + 1.2 * cfg.family_shift;
  // Reverse order so wing angle is not a monotone copy of the beak cue.
  a.wing_angle = 0.55 + 1.25 * (1.0 - t) + 0.45 * cfg.family_shift;
  return a;
}

inline double smoothstep_edge(double signed_dist) {
  // 1 inside, 0 outside, ~1.5px soft edge.
  const double t = std::clamp(0.5 - signed_dist / 1.5, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

inline Tensor render_image(const SynthConfig& cfg, std::size_t cls, Rng& rng) {
  const std::size_t s = cfg.size;
  const double sd = static_cast<double>(s);
  Tensor img({s, s, 3});

  // Background: random base color plus a low-frequency diagonal wave.
  double bg[3];
  for (double& v : bg) v = rng.uniform(0.10, 0.45);
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double amp = rng.uniform(0.03, 0.08);

  // Pose, position and scale vary per image (intra-class variance).
  const double pose = rng.uniform(-0.35, 0.35);
  const double cx = sd * (0.5 + rng.uniform(-0.10, 0.10));
  const double cy = sd * (0.5 + rng.uniform(-0.10, 0.10));
  const double scale = rng.uniform(0.85, 1.15);

  ClassAttributes attr = class_attributes(cfg, cls);
  const double beak_aspect = attr.beak_aspect + rng.uniform(-0.08, 0.08);
  const double wing_angle = attr.wing_angle + rng.uniform(-0.05, 0.05);

  double body_col[3] = {0.46 + 0.30 * cfg.family_shift,
                        0.30 - 0.12 * cfg.family_shift,
                        0.20 + 0.24 * cfg.family_shift};
  for (double& v : body_col) v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
  const double wing_col[3] = {body_col[0] * 0.45, body_col[1] * 0.45, body_col[2] * 0.45};
  const double beak_col[3] = {0.95, 0.78, 0.15};
  const double eye_col[3] = {0.05, 0.05, 0.08};

  const double body_a = 0.26 * sd * scale;  // semi-axes of the body ellipse
  const double body_b = 0.16 * sd * scale;
  const double cp = std::cos(pose), sp = std::sin(pose);

  // Head center sits at the front of the body axis; the beak mark extends it.
  const double head_x = cx + cp * body_a * 0.95;
  const double head_y = cy + sp * body_a * 0.95;
  const double beak_area = 0.0022 * sd * sd * scale;
  const double beak_len = std::sqrt(beak_area * beak_aspect);
  const double beak_wid = std::sqrt(beak_area / beak_aspect);

  // Wing: a slim triangle leaving the body center at pose + wing_angle.
  const double wdir = pose + wing_angle;
  const double wing_len = 0.30 * sd * scale;
  const double wing_half = 0.085 * sd * scale;
  const double wx = std::cos(wdir), wy = std::sin(wdir);

  for (std::size_t py = 0; py < s; ++py) {
    for (std::size_t px = 0; px < s; ++px) {
      const double x = static_cast<double>(px) + 0.5;
      const double y = static_cast<double>(py) + 0.5;
      double r = bg[0] + amp * std::sin((fx * x + fy * y) * 6.283185307179586 / sd + phase);
      double g = bg[1] + amp * std::sin((fx * x - fy * y) * 6.283185307179586 / sd + phase);
      double b = bg[2] + amp * std::cos((fx * x + fy * y) * 6.283185307179586 / sd - phase);

      // Body ellipse in the body frame.
      const double dx = x - cx, dy = y - cy;
      const double bx = (dx * cp + dy * sp) / body_a;
      const double by = (-dx * sp + dy * cp) / body_b;
      const double body_d = (std::sqrt(bx * bx + by * by) - 1.0) * std::min(body_a, body_b);
      const double body_m = smoothstep_edge(body_d);

      // Wing triangle: distance along the wing axis and across it.
      const double wu = dx * wx + dy * wy;
      const double wv = std::fabs(-dx * wy + dy * wx);
      double wing_m = 0.0;
      if (wu > 0.0 && wu < wing_len) {
        const double half_here = wing_half * (1.0 - wu / wing_len);
        wing_m = smoothstep_edge(wv - half_here);
      }

      // Beak mark: small ellipse ahead of the head, aspect set by the class.
      const double ex = x - head_x, ey = y - head_y;
      const double ax = (ex * cp + ey * sp) / (0.5 * beak_len);
      const double ay = (-ex * sp + ey * cp) / (0.5 * beak_wid);
      const double beak_d = (std::sqrt(ax * ax + ay * ay) - 1.0) * 0.25 * std::min(beak_len, beak_wid);
      const double beak_m = smoothstep_edge(beak_d);

      // Eye dot: fixed offset in the body frame, identical for all classes.
      const double ox = cx + cp * body_a * 0.55 - sp * body_b * -0.35;
      const double oy = cy + sp * body_a * 0.55 + cp * body_b * -0.35;
      const double ed = std::hypot(x - ox, y - oy) - 0.035 * sd * scale;
      const double eye_m = smoothstep_edge(ed);

      r = r + body_m * (body_col[0] - r);
      g = g + body_m * (body_col[1] - g);
      b = b + body_m * (body_col[2] - b);
      r = r + wing_m * (wing_col[0] - r);
      g = g + wing_m * (wing_col[1] - g);
      b = b + wing_m * (wing_col[2] - b);
      r = r + eye_m * (eye_col[0] - r);
      g = g + eye_m * (eye_col[1] - g);
      b = b + eye_m * (eye_col[2] - b);
      r = r + beak_m * (beak_col[0] - r);
      g = g + beak_m * (beak_col[1] - g);
      b = b + beak_m * (beak_col[2] - b);

      img.at3(py, px, 0) = std::clamp(r, 0.0, 1.0);
      img.at3(py, px, 1) = std::clamp(g, 0.0, 1.0);
      img.at3(py, px, 2) = std::clamp(b, 0.0, 1.0);
    }
  }
  return img;
}

}  // namespace synth

inline std::pair<LabeledDataset, LabeledDataset> generate_synthetic(
    const SynthConfig& cfg) {
  if (cfg.n_classes == 0 || cfg.per_class_train == 0 || cfg.per_class_test == 0 ||
      cfg.size == 0)
    throw std::invalid_argument("generate_synthetic: all sizes must be >= 1");
  Rng base(cfg.seed);
  LabeledDataset train, test;
  train.split = "train";
  test.split = "test";
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    std::ostringstream name;
    name << "bird_" << (c < 10 ? "0" : "") << c;
    train.class_names.push_back(name.str());
    test.class_names.push_back(name.str());
  }
  // Distinct split streams derived from the master seed keep train and test
  // draws independent.
  const std::uint64_t test_offset = 1ull << 40;
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    for (std::size_t i = 0; i < cfg.per_class_train; ++i) {
      Rng r = base.split(c * cfg.per_class_train + i);
      train.images.push_back(synth::render_image(cfg, c, r));
      train.labels.push_back(c);
    }
    for (std::size_t i = 0; i < cfg.per_class_test; ++i) {
      Rng r = base.split(test_offset + c * cfg.per_class_test + i);
      test.images.push_back(synth::render_image(cfg, c, r));
      test.labels.push_back(c);
    }
  }
  return {std::move(train), std::move(test)};
}

// ---- dataset directory: PPM files + labels.csv (filename,class_name,split) ----

inline void save_dataset(const std::string& dir, const LabeledDataset& train,
                         const LabeledDataset& test) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "labels.csv");
  if (!manifest) throw std::runtime_error("save_dataset: cannot write labels.csv");
  manifest << "filename,class_name,split\n";
  auto dump = [&](const LabeledDataset& ds) {
    std::vector<std::size_t> per_class(ds.n_classes(), 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::size_t c = ds.labels[i];
      std::ostringstream fn;
      fn << ds.class_names[c] << "_" << ds.split << "_" << per_class[c]++ << ".ppm";
      write_ppm((fs::path(dir) / fn.str()).string(), ds.images[i]);
      manifest << fn.str() << "," << ds.class_names[c] << "," << ds.split << "\n";
    }
  };
  dump(train);
  dump(test);
}

// Loads one split.  Class ids follow first appearance in the manifest so the
// train and test splits of a directory always agree on the labeling.
inline LabeledDataset load_dataset(const std::string& dir,
                                   const std::string& split) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "labels.csv");
  if (!manifest)
    throw std::runtime_error("load_dataset: missing labels.csv in " + dir);
  std::string line;
  if (!std::getline(manifest, line) || line.rfind("filename,class_name,split", 0) != 0)
    throw std::runtime_error("load_dataset: bad labels.csv header in " + dir);

  LabeledDataset ds;
  ds.split = split;
  std::map<std::string, std::size_t> class_ids;
  std::size_t h = 0, w = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::runtime_error("load_dataset: malformed manifest row: " + line);
    const std::string fname = line.substr(0, c1);
    const std::string cname = line.substr(c1 + 1, c2 - c1 - 1);
    const std::string srow = line.substr(c2 + 1);
    if (!class_ids.count(cname)) {
      class_ids[cname] = ds.class_names.size();
      ds.class_names.push_back(cname);
    }
    if (srow != split) continue;
    Tensor img = read_ppm((fs::path(dir) / fname).string());
    if (ds.images.empty()) {
      h = img.dim(0);
      w = img.dim(1);
    } else if (img.dim(0) != h || img.dim(1) != w) {
      throw std::runtime_error("load_dataset: inconsistent image sizes in " + dir);
    }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(class_ids[cname]);
  }
  return ds;
}

// D-dimensional feature per image: pooled backbone features when a model is
// given, otherwise an 8x8 downsampled pixel flatten.
inline Tensor extract_profile_features(const LabeledDataset& ds,
                                       const ModelParams* params = nullptr) {
  if (ds.size() == 0)
    throw std::invalid_argument("extract_profile_features: empty dataset");
  std::vector<Tensor> rows;
  rows.reserve(ds.size());
  for (const Tensor& img : ds.images) {
    if (params) {
      rows.push_back(global_avg_pool(forward_trace(*params, img).features));
    } else {
      Tensor small = bilinear_resize(img, 8, 8);
      rows.push_back(Tensor({small.size()}, small.data));
    }
  }
  const std::size_t d = rows.front().size();
  Tensor out({ds.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d)
      throw std::runtime_error("extract_profile_features: inconsistent feature dims");
    std::copy(rows[i].data.begin(), rows[i].data.end(), &out.data[i * d]);
  }
  return out;
}

}  // namespace fgvc
