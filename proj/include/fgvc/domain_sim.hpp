#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fgvc/tensor.hpp"

// Earth Mover's Distance between domains represented as weighted class
// centroids, solved exactly as a transportation problem, plus the derived
// similarity score, source ranking and per-category top-k selection.

namespace fgvc {

// Per-class feature centroids with per-class mass (weights sum to 1).
struct DomainProfile {
  std::string name;
  Tensor centroids;                     // [n_classes, D]
  std::vector<double> weights;          // non-negative, sums to 1
  std::vector<std::string> class_names;

  std::size_t n_classes() const { return centroids.dim(0); }
  std::size_t feature_dim() const { return centroids.dim(1); }

  void validate() const {
    if (centroids.ndim() != 2 || n_classes() == 0)
      throw std::invalid_argument("profile: centroids must be [n_classes, D]");
    if (weights.size() != n_classes() || class_names.size() != n_classes())
      throw std::invalid_argument("profile: weights/class_names length mismatch");
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw std::invalid_argument("profile: negative class weight");
      sum += w;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("profile: weights must sum to 1");
    if (!centroids.all_finite())
      throw std::invalid_argument("profile: non-finite centroid");
  }
};

// Class centroids are per-class feature means; class mass is the sample
// fraction.  Gaps in the label range are compacted with a warning.
inline DomainProfile build_profile(const Tensor& features,
                                   const std::vector<std::size_t>& labels,
                                   const std::string& name,
                                   std::vector<std::string> class_names = {}) {
  if (features.ndim() != 2)
    throw std::invalid_argument("build_profile: features must be [N, D]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n == 0 || labels.size() != n)
    throw std::invalid_argument("build_profile: empty domain or label length mismatch");

  std::size_t max_label = 0;
  for (std::size_t l : labels) max_label = std::max(max_label, l);
  std::vector<std::size_t> counts(max_label + 1, 0);
  for (std::size_t l : labels) ++counts[l];

  std::vector<std::size_t> remap(max_label + 1, 0);
  std::size_t n_classes = 0;
  bool gaps = false;
  for (std::size_t l = 0; l <= max_label; ++l) {
    if (counts[l] == 0) {
      gaps = true;
      continue;
    }
    remap[l] = n_classes++;
  }
  if (gaps)
    std::cerr << "build_profile: label range has gaps, compacting to " << n_classes
              << " classes\n";

  DomainProfile p;
  p.name = name;
  p.centroids = Tensor({n_classes, d});
  p.weights.assign(n_classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = remap[labels[i]];
    p.weights[cls] += 1.0;
    for (std::size_t j = 0; j < d; ++j)
      p.centroids.at2(cls, j) += features.at2(i, j);
  }
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    for (std::size_t j = 0; j < d; ++j) p.centroids.at2(cls, j) /= p.weights[cls];
    p.weights[cls] /= static_cast<double>(n);
  }

  for (std::size_t l = 0; l <= max_label; ++l) {
    if (counts[l] == 0) continue;
    if (l < class_names.size()) p.class_names.push_back(class_names[l]);
    else p.class_names.push_back("class_" + std::to_string(l));
  }
  return p;
}

// Pairwise Euclidean distances between source and target centroids.
inline Tensor distance_matrix(const DomainProfile& src, const DomainProfile& dst) {
  if (src.feature_dim() != dst.feature_dim())
    throw std::invalid_argument("distance_matrix: feature dims differ");
  const std::size_t m = src.n_classes(), n = dst.n_classes(), d = src.feature_dim();
  Tensor dist({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = src.centroids.at2(i, k) - dst.centroids.at2(j, k);
        acc += diff * diff;
      }
      dist.at2(i, j) = std::sqrt(acc);
    }
  return dist;
}

// Optimal transportation flow with its cost and the distance matrix it was
// solved against.  Row sums match source weights, column sums target weights.
struct FlowPlan {
  Tensor flow;  // [m, n]
  double cost = 0.0;
  Tensor dist;  // [m, n]
};

namespace detail {

// Min-cost flow on the dense bipartite transportation graph, successive
// shortest augmenting paths with node potentials (Dijkstra on reduced
// costs).  Supplies and demands must balance.
inline Tensor solve_transport(const Tensor& dist, std::vector<double> supply,
                              std::vector<double> demand) {
  const std::size_t m = supply.size(), n = demand.size();
  const std::size_t nodes = m + n;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr double kEps = 1e-13;

  Tensor flow({m, n});
  std::vector<double> potential(nodes, 0.0);
  std::vector<double> dist_to(nodes);
  std::vector<int> parent(nodes);
  std::vector<char> done(nodes);

  double remaining = 0.0;
  for (double s : supply) remaining += s;

  while (remaining > kEps) {
    std::fill(dist_to.begin(), dist_to.end(), kInf);
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    for (std::size_t i = 0; i < m; ++i)
      if (supply[i] > kEps) dist_to[i] = 0.0;

    // Dense Dijkstra over sources (0..m-1) and sinks (m..m+n-1).
    for (std::size_t it = 0; it < nodes; ++it) {
      int u = -1;
      double best = kInf;
      for (std::size_t v = 0; v < nodes; ++v)
        if (!done[v] && dist_to[v] < best) {
          best = dist_to[v];
          u = static_cast<int>(v);
        }
      if (u < 0) break;
      done[u] = 1;
      if (u < static_cast<int>(m)) {
        const std::size_t i = static_cast<std::size_t>(u);
        for (std::size_t j = 0; j < n; ++j) {
          const double rc = dist.at2(i, j) + potential[i] - potential[m + j];
          if (dist_to[i] + rc < dist_to[m + j] - 1e-15) {
            dist_to[m + j] = dist_to[i] + rc;
            parent[m + j] = u;
          }
        }
      } else {
        const std::size_t j = static_cast<std::size_t>(u) - m;
        for (std::size_t i = 0; i < m; ++i) {
          if (flow.at2(i, j) <= kEps) continue;
          const double rc = -dist.at2(i, j) + potential[m + j] - potential[i];
          if (dist_to[m + j] + rc < dist_to[i] - 1e-15) {
            dist_to[i] = dist_to[m + j] + rc;
            parent[i] = u;
          }
        }
      }
    }

    int sink = -1;
    double best = kInf;
    for (std::size_t j = 0; j < n; ++j)
      if (demand[j] > kEps && dist_to[m + j] < best) {
        best = dist_to[m + j];
        sink = static_cast<int>(m + j);
      }
    if (sink < 0)
      throw std::runtime_error("emd: no augmenting path (unbalanced instance)");

    for (std::size_t v = 0; v < nodes; ++v)
      if (dist_to[v] < kInf) potential[v] += dist_to[v];
      else potential[v] += best;

    // Walk back to a source, collecting the bottleneck.
    double delta = demand[static_cast<std::size_t>(sink) - m];
    int v = sink;
    while (parent[v] >= 0) {
      const int u = parent[v];
      if (v >= static_cast<int>(m))  // forward arc u (source) -> v (sink)
        ;                            // unbounded capacity
      else                           // backward arc: undo flow v (source) <- u (sink)
        delta = std::min(delta, flow.at2(static_cast<std::size_t>(v),
                                         static_cast<std::size_t>(u) - m));
      v = u;
    }
    delta = std::min(delta, supply[static_cast<std::size_t>(v)]);

    const std::size_t start = static_cast<std::size_t>(v);
    v = sink;
    while (parent[v] >= 0) {
      const int u = parent[v];
      if (v >= static_cast<int>(m))
        flow.at2(static_cast<std::size_t>(u), static_cast<std::size_t>(v) - m) += delta;
      else
        flow.at2(static_cast<std::size_t>(v), static_cast<std::size_t>(u) - m) -= delta;
      v = u;
    }
    supply[start] -= delta;
    demand[static_cast<std::size_t>(sink) - m] -= delta;
    remaining -= delta;
  }
  return flow;
}

}  // namespace detail

// Exact EMD between two profiles: minimize sum f_ij * d_ij over flows whose
// marginals equal the class weights, cost normalized by the total flow.
// Weight sums off by more than 1e-6 raise an unbalanced-domain error;
// smaller drift is renormalized.
inline FlowPlan emd(const DomainProfile& src, const DomainProfile& dst) {
  src.validate();
  dst.validate();
  double sum_s = 0.0, sum_t = 0.0;
  for (double w : src.weights) sum_s += w;
  for (double w : dst.weights) sum_t += w;
  if (std::fabs(sum_s - sum_t) > 1e-6)
    throw std::runtime_error("emd: unbalanced domains (weight sums differ)");

  std::vector<double> supply = src.weights, demand = dst.weights;
  for (double& w : supply) w /= sum_s;
  for (double& w : demand) w /= sum_t;

  FlowPlan plan;
  plan.dist = distance_matrix(src, dst);
  plan.flow = detail::solve_transport(plan.dist, supply, demand);
  double total = 0.0, work = 0.0;
  for (std::size_t i = 0; i < plan.flow.size(); ++i) {
    work += plan.flow.data[i] * plan.dist.data[i];
    total += plan.flow.data[i];
  }
  plan.cost = work / total;
  return plan;
}

// similarity = exp(-gamma * cost); gamma defaults to 0.01.
inline double similarity(double cost, double gamma = 0.01) {
  if (cost < 0.0) throw std::invalid_argument("similarity: negative cost");
  return std::exp(-gamma * cost);
}

struct RankedSource {
  std::string name;
  double cost = 0.0;
  double sim = 0.0;
};

// Descending similarity; ties broken by name.
inline std::vector<RankedSource> rank_sources(
    const std::vector<DomainProfile>& sources, const DomainProfile& target,
    double gamma = 0.01) {
  if (sources.empty()) throw std::invalid_argument("rank_sources: no sources");
  std::vector<RankedSource> ranked;
  ranked.reserve(sources.size());
  for (const auto& s : sources) {
    FlowPlan plan = emd(s, target);
    ranked.push_back({s.name, plan.cost, similarity(plan.cost, gamma)});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedSource& a, const RankedSource& b) {
                     if (a.sim != b.sim) return a.sim > b.sim;
                     return a.name < b.name;
                   });
  return ranked;
}

// Per-category similarity: each source class scores by the similarity of its
// nearest target centroid; returns the k best class indices, ties by index.
inline std::vector<std::size_t> top_k_categories(const DomainProfile& src,
                                                 const DomainProfile& dst,
                                                 std::size_t k,
                                                 double gamma = 0.01) {
  if (k == 0 || k > src.n_classes())
    throw std::invalid_argument("top_k_categories: k out of range");
  Tensor dist = distance_matrix(src, dst);
  const std::size_t m = src.n_classes(), n = dst.n_classes();
  std::vector<std::pair<double, std::size_t>> scored(m);
  for (std::size_t i = 0; i < m; ++i) {
    double best = dist.at2(i, 0);
    for (std::size_t j = 1; j < n; ++j) best = std::min(best, dist.at2(i, j));
    scored[i] = {similarity(best, gamma), i};
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scored[i].second;
  return out;
}

// ---- profile directory: manifest.csv (class_name, weight) + centroids.tdf ----

inline void save_profile(const std::string& dir, const DomainProfile& p) {
  namespace fs = std::filesystem;
  p.validate();
  fs::create_directories(dir);
  std::ofstream os(fs::path(dir) / "manifest.csv");
  if (!os) throw std::runtime_error("profile: cannot write manifest in " + dir);
  os << "class_name,weight\n";
  os.precision(17);
  for (std::size_t i = 0; i < p.n_classes(); ++i)
    os << p.class_names[i] << "," << p.weights[i] << "\n";
  write_tdf((fs::path(dir) / "centroids.tdf").string(), p.centroids);
}

inline DomainProfile load_profile(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "manifest.csv");
  if (!is) throw std::runtime_error("profile: missing manifest.csv in " + dir);
  DomainProfile p;
  p.name = fs::path(dir).filename().string();
  if (p.name.empty()) p.name = dir;
  std::string line;
  if (!std::getline(is, line) || line.rfind("class_name,weight", 0) != 0)
    throw std::runtime_error("profile: bad manifest header in " + dir);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw std::runtime_error("profile: malformed manifest row in " + dir);
    p.class_names.push_back(line.substr(0, comma));
    p.weights.push_back(std::stod(line.substr(comma + 1)));
  }
  p.centroids = read_tdf((fs::path(dir) / "centroids.tdf").string());
  // Centroids round-trip through 32-bit storage; re-balance the weights.
  double sum = 0.0;
  for (double w : p.weights) sum += w;
  if (sum <= 0.0) throw std::runtime_error("profile: zero total weight in " + dir);
  for (double& w : p.weights) w /= sum;
  p.validate();
  return p;
}

}  // namespace fgvc
