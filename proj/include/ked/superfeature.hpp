// Superfeature construction: estimate the class-summed input Hessian of a
// trained model by central differences of its analytic input gradients,
// fold it into a symmetric nonnegative dependency matrix, and read feature
// groups off as graph communities at a tuned resolution.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ked/dataset.hpp"
#include "ked/graph.hpp"
#include "ked/model.hpp"
#include "ked/tensor.hpp"

namespace ked {

struct HessianEstimate {
  std::size_t dim = 0;
  std::vector<double> matrix;  // dim x dim row-major
  std::size_t sample_count = 0;
  bool class_summed = true;
};

struct DependencyMatrix {
  std::size_t dim = 0;
  std::vector<double> matrix;  // symmetric, nonnegative, zero diagonal

  void validate() const {
    if (matrix.size() != dim * dim) throw std::invalid_argument("dependency matrix: size mismatch");
    for (std::size_t i = 0; i < dim; ++i) {
      if (matrix[i * dim + i] != 0.0) {
        throw std::invalid_argument("dependency matrix: nonzero diagonal");
      }
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = matrix[i * dim + j];
        if (!(v >= 0.0) || !std::isfinite(v)) {
          throw std::invalid_argument("dependency matrix: entries must be finite and nonnegative");
        }
        if (v != matrix[j * dim + i]) {
          throw std::invalid_argument("dependency matrix: not symmetric");
        }
      }
    }
  }
};

// Maps a [batch, d] sample block to [batch, C] per-class log-probabilities.
using LogProbFn = std::function<Tensor(const Tensor&)>;

// Averaged class-summed input Hessian over the given samples. Row i of each
// per-sample Hessian is the central difference of the input gradient of
// sum_y log p(y|x) along coordinate i. Samples yielding non-finite gradients
// are skipped with a warning and the average adjusts.
inline HessianEstimate estimate_hessian(const LogProbFn& log_proba, std::size_t dim,
                                        const std::vector<double>& samples, std::size_t count,
                                        double fd_step) {
  if (fd_step <= 0.0) throw std::invalid_argument("estimate_hessian: fd step must be positive");
  if (count == 0 || samples.size() != count * dim) {
    throw std::invalid_argument("estimate_hessian: sample buffer does not match count");
  }
  HessianEstimate est;
  est.dim = dim;
  est.matrix.assign(dim * dim, 0.0);

  std::vector<double> perturbed(2 * dim * dim);
  for (std::size_t s = 0; s < count; ++s) {
    const double* x = samples.data() + s * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      double* plus = perturbed.data() + (2 * i) * dim;
      double* minus = perturbed.data() + (2 * i + 1) * dim;
      std::copy_n(x, dim, plus);
      std::copy_n(x, dim, minus);
      plus[i] += fd_step;
      minus[i] -= fd_step;
    }
    Tensor batch = Tensor::matrix(2 * dim, dim, perturbed);
    batch.set_requires_grad(true);
    Tensor total = sum(log_proba(batch));
    total.backward();
    const auto& g = batch.grad();

    bool finite = true;
    for (double v : g) finite = finite && std::isfinite(v);
    if (!finite) {
      std::cerr << "estimate_hessian: non-finite gradient, skipping sample " << s << "\n";
      continue;
    }
    const double inv = 1.0 / (2.0 * fd_step);
    for (std::size_t i = 0; i < dim; ++i) {
      const double* gp = g.data() + (2 * i) * dim;
      const double* gm = g.data() + (2 * i + 1) * dim;
      double* row = est.matrix.data() + i * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] += (gp[j] - gm[j]) * inv;
    }
    ++est.sample_count;
  }
  if (est.sample_count == 0) {
    throw std::runtime_error("estimate_hessian: every sample produced non-finite gradients");
  }
  const double inv_n = 1.0 / static_cast<double>(est.sample_count);
  for (double& v : est.matrix) v *= inv_n;
  return est;
}

inline HessianEstimate estimate_hessian(const TypeMModel& teacher, const Dataset& subset,
                                        double fd_step = 1e-3) {
  if (subset.feature_count != teacher.input_dim()) {
    throw std::invalid_argument("estimate_hessian: dataset does not match the model input");
  }
  return estimate_hessian([&teacher](const Tensor& x) { return teacher.log_proba(x); },
                          teacher.input_dim(), subset.features, subset.sample_count(), fd_step);
}

// W = |H| + |H|^T with a forced zero diagonal.
inline DependencyMatrix build_dependency_matrix(const HessianEstimate& h) {
  for (double v : h.matrix) {
    if (!std::isfinite(v)) throw std::invalid_argument("build_dependency_matrix: non-finite entry");
  }
  DependencyMatrix w;
  w.dim = h.dim;
  w.matrix.assign(h.dim * h.dim, 0.0);
  for (std::size_t i = 0; i < h.dim; ++i) {
    for (std::size_t j = 0; j < h.dim; ++j) {
      if (i == j) continue;
      w.matrix[i * h.dim + j] = std::abs(h.matrix[i * h.dim + j]) + std::abs(h.matrix[j * h.dim + i]);
    }
  }
  w.validate();
  return w;
}

inline SuperfeaturePartition partition_from_communities(const Partition& p) {
  SuperfeaturePartition sp;
  sp.groups = p.groups();
  sp.canonicalize();
  return sp;
}

// Louvain communities of the dependency graph at the given resolution. An
// all-zero W yields all-singleton groups.
inline SuperfeaturePartition construct_superfeatures(const DependencyMatrix& w, double resolution,
                                                     std::uint64_t seed = 0) {
  w.validate();
  WeightedGraph g = WeightedGraph::from_dense(w.matrix, w.dim);
  Partition p = louvain(g, resolution, seed);
  SuperfeaturePartition sp = partition_from_communities(p);
  sp.validate(w.dim);
  return sp;
}

// Fraction of total dependency mass crossing group boundaries; zero for a
// perfectly separable W (and for the edgeless one).
inline double cross_block_mass(const DependencyMatrix& w, const SuperfeaturePartition& partition) {
  partition.validate(w.dim);
  std::vector<std::size_t> group_of(w.dim);
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    for (std::size_t i : partition.groups[g]) group_of[i] = g;
  }
  double total = 0.0, crossing = 0.0;
  for (std::size_t i = 0; i < w.dim; ++i) {
    for (std::size_t j = 0; j < w.dim; ++j) {
      const double v = w.matrix[i * w.dim + j];
      total += v;
      if (group_of[i] != group_of[j]) crossing += v;
    }
  }
  return total == 0.0 ? 0.0 : crossing / total;
}

struct ResolutionTuning {
  double resolution = 0.0;
  SuperfeaturePartition partition;
  std::size_t communities_before_repair = 0;
  bool repaired = false;
};

namespace detail {

// Merge the group pair with the heaviest connecting mass (ties toward the
// lexicographically smallest pair) until the target count is reached.
inline void merge_groups_to_target(std::vector<std::vector<std::size_t>>& groups,
                                   const DependencyMatrix& w, std::size_t target) {
  while (groups.size() > target) {
    double best_weight = -1.0;
    std::size_t best_a = 0, best_b = 1;
    for (std::size_t a = 0; a < groups.size(); ++a) {
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        double mass = 0.0;
        for (std::size_t i : groups[a]) {
          for (std::size_t j : groups[b]) mass += w.matrix[i * w.dim + j];
        }
        if (mass > best_weight) {
          best_weight = mass;
          best_a = a;
          best_b = b;
        }
      }
    }
    auto& dst = groups[best_a];
    dst.insert(dst.end(), groups[best_b].begin(), groups[best_b].end());
    std::sort(dst.begin(), dst.end());
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(best_b));
  }
}

// Split the largest group via Louvain on its induced subgraph, escalating the
// resolution until it fractures; falls back to an even index split when the
// subgraph refuses to break (e.g. uniform cliques or all-zero blocks).
inline void split_groups_to_target(std::vector<std::vector<std::size_t>>& groups,
                                   const DependencyMatrix& w, std::size_t target,
                                   double base_resolution, std::uint64_t seed) {
  while (groups.size() < target) {
    std::size_t largest = 0;
    for (std::size_t g = 1; g < groups.size(); ++g) {
      if (groups[g].size() > groups[largest].size()) largest = g;
    }
    auto members = groups[largest];
    if (members.size() < 2) {
      throw std::runtime_error("tune_resolution: cannot split singleton groups further");
    }
    std::vector<double> sub(members.size() * members.size(), 0.0);
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = 0; b < members.size(); ++b) {
        sub[a * members.size() + b] = w.matrix[members[a] * w.dim + members[b]];
      }
    }
    WeightedGraph g = WeightedGraph::from_dense(sub, members.size());
    std::vector<std::vector<std::size_t>> pieces;
    for (double res = std::max(base_resolution, 1.0); res <= 4096.0; res *= 2.0) {
      Partition p = louvain(g, res, seed);
      if (p.community_count() > 1) {
        for (const auto& piece : p.groups()) {
          std::vector<std::size_t> original;
          original.reserve(piece.size());
          for (std::size_t local : piece) original.push_back(members[local]);
          pieces.push_back(std::move(original));
        }
        break;
      }
    }
    if (pieces.empty()) {
      const std::size_t half = members.size() / 2;
      pieces.emplace_back(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(half));
      pieces.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(half), members.end());
    }
    groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(largest));
    groups.insert(groups.end(), pieces.begin(), pieces.end());
  }
}

}  // namespace detail

// Scans the resolution upward in fixed increments until Louvain yields
// exactly target_m communities. If no scanned resolution hits the target,
// the closest one wins (ties toward the smaller resolution) and the
// partition is repaired by merging the most-connected group pair or by
// recursively splitting the largest group.
inline ResolutionTuning tune_resolution(const DependencyMatrix& w, std::size_t target_m,
                                        double step = 0.01, double max_resolution = 10.0,
                                        std::uint64_t seed = 0) {
  w.validate();
  if (target_m == 0 || target_m > w.dim) {
    throw std::invalid_argument("tune_resolution: target M must lie in [1, d]");
  }
  if (step <= 0.0 || max_resolution < step) {
    throw std::invalid_argument("tune_resolution: need 0 < step <= max resolution");
  }
  WeightedGraph g = WeightedGraph::from_dense(w.matrix, w.dim);

  ResolutionTuning best;
  std::size_t best_distance = SIZE_MAX;
  const auto steps = static_cast<std::size_t>(std::floor(max_resolution / step + 1e-9));
  for (std::size_t k = 1; k <= steps; ++k) {
    const double res = static_cast<double>(k) * step;
    Partition p = louvain(g, res, seed);
    const std::size_t m = p.community_count();
    const std::size_t distance = m > target_m ? m - target_m : target_m - m;
    if (distance < best_distance) {
      best_distance = distance;
      best.resolution = res;
      best.partition = partition_from_communities(p);
      best.communities_before_repair = m;
      if (distance == 0) return best;
    }
  }

  best.repaired = true;
  auto groups = best.partition.groups;
  if (groups.size() > target_m) {
    detail::merge_groups_to_target(groups, w, target_m);
  } else {
    detail::split_groups_to_target(groups, w, target_m, best.resolution, seed);
  }
  best.partition.groups = std::move(groups);
  best.partition.canonicalize();
  best.partition.validate(w.dim);
  return best;
}

// Plain-text partition file: "d M" header, then one line of feature indices
// per group. This is the interchange format for externally supplied groupings.
inline void save_partition(const SuperfeaturePartition& p, std::size_t dim,
                           const std::string& path) {
  p.validate(dim);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << dim << " " << p.groups.size() << "\n";
  for (const auto& group : p.groups) {
    for (std::size_t j = 0; j < group.size(); ++j) out << (j ? " " : "") << group[j];
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline SuperfeaturePartition load_partition(const std::string& path, std::size_t expected_dim = 0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::size_t dim = 0, m = 0;
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error(path + ": empty partition file");
  {
    std::istringstream hs(header);
    if (!(hs >> dim >> m) || dim == 0 || m == 0) {
      throw std::runtime_error(path + ": bad partition header (want 'd M')");
    }
  }
  if (expected_dim != 0 && dim != expected_dim) {
    throw std::runtime_error(path + ": partition is over " + std::to_string(dim) +
                             " features, expected " + std::to_string(expected_dim));
  }
  SuperfeaturePartition p;
  p.groups.resize(m);
  std::string line;
  for (std::size_t g = 0; g < m; ++g) {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing group line");
    std::istringstream ls(line);
    std::size_t idx;
    while (ls >> idx) p.groups[g].push_back(idx);
  }
  p.validate(dim);
  return p;
}

// Plain-text export: first line the dimension, then one row per line.
inline void save_dependency_matrix(const DependencyMatrix& w, const std::string& path) {
  w.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  out << w.dim << "\n";
  for (std::size_t i = 0; i < w.dim; ++i) {
    for (std::size_t j = 0; j < w.dim; ++j) {
      out << (j ? " " : "") << w.matrix[i * w.dim + j];
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline DependencyMatrix load_dependency_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  DependencyMatrix w;
  if (!(in >> w.dim) || w.dim == 0) throw std::runtime_error(path + ": bad dimension header");
  w.matrix.resize(w.dim * w.dim);
  for (double& v : w.matrix) {
    if (!(in >> v)) throw std::runtime_error(path + ": truncated matrix body");
  }
  w.validate();
  return w;
}

}  // namespace ked
