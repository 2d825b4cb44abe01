// Superfeature partitions and the type-M explaining architecture: M subnets,
// one per feature group, combined in log space through the class prior.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "ked/mlp.hpp"
#include "ked/tensor.hpp"

namespace ked {

// Disjoint cover of the feature indices {0..d-1} into M nonempty groups.
struct SuperfeaturePartition {
  std::vector<std::vector<std::size_t>> groups;

  std::size_t group_count() const { return groups.size(); }

  std::size_t feature_count() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.size();
    return n;
  }

  void validate(std::size_t dim) const {
    if (groups.empty() || groups.size() > dim) {
      throw std::invalid_argument("partition: group count must lie in [1, d]");
    }
    std::vector<bool> seen(dim, false);
    for (const auto& g : groups) {
      if (g.empty()) throw std::invalid_argument("partition: empty group");
      for (std::size_t i : g) {
        if (i >= dim) throw std::invalid_argument("partition: feature index out of range");
        if (seen[i]) throw std::invalid_argument("partition: feature assigned twice");
        seen[i] = true;
      }
    }
    for (std::size_t i = 0; i < dim; ++i) {
      if (!seen[i]) throw std::invalid_argument("partition: feature " + std::to_string(i) +
                                                " unassigned");
    }
  }

  // Sorted indices within groups, groups ordered by smallest member.
  void canonicalize() {
    for (auto& g : groups) std::sort(g.begin(), g.end());
    std::sort(groups.begin(), groups.end(),
              [](const auto& a, const auto& b) { return a.front() < b.front(); });
  }

  static SuperfeaturePartition trivial(std::size_t dim) {
    SuperfeaturePartition p;
    p.groups.emplace_back(dim);
    std::iota(p.groups[0].begin(), p.groups[0].end(), 0);
    return p;
  }

  // Balanced random grouping (sizes differ by at most one).
  static SuperfeaturePartition random(std::size_t dim, std::size_t m, std::uint64_t seed) {
    if (m == 0 || m > dim) throw std::invalid_argument("partition: M must lie in [1, d]");
    std::vector<std::size_t> idx(dim);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    SuperfeaturePartition p;
    p.groups.resize(m);
    for (std::size_t i = 0; i < dim; ++i) p.groups[i % m].push_back(idx[i]);
    p.canonicalize();
    return p;
  }
};

// One subnet per superfeature plus a fixed class prior. Per-group posteriors
// are the explanations; the prediction renormalizes their product divided by
// prior^(M-1), evaluated as a softmax over the total logit. M == 1 is a plain
// black-box MLP (the prior exponent vanishes).
class TypeMModel {
 public:
  TypeMModel() = default;

  TypeMModel(SuperfeaturePartition partition, std::vector<std::size_t> hidden_widths,
             std::size_t num_classes, std::vector<double> prior, std::mt19937_64& rng)
      : partition_(std::move(partition)), prior_(std::move(prior)) {
    const std::size_t d = partition_.feature_count();
    partition_.validate(d);
    validate_prior(prior_, num_classes);
    for (const auto& group : partition_.groups) {
      MLPSpec spec{group.size(), hidden_widths, num_classes};
      subnets_.emplace_back(spec, rng);
    }
  }

  static TypeMModel black_box(MLPSpec spec, std::mt19937_64& rng) {
    spec.validate();
    std::vector<double> uniform(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
    return TypeMModel(SuperfeaturePartition::trivial(spec.input_dim), spec.hidden_widths,
                      spec.num_classes, std::move(uniform), rng);
  }

  // Rebuilds a model from stored parts (persistence path).
  static TypeMModel from_parts(SuperfeaturePartition partition, std::vector<Mlp> subnets,
                               std::vector<double> prior) {
    TypeMModel m;
    m.partition_ = std::move(partition);
    m.subnets_ = std::move(subnets);
    m.prior_ = std::move(prior);
    const std::size_t d = m.partition_.feature_count();
    m.partition_.validate(d);
    validate_prior(m.prior_, m.prior_.size());
    if (m.subnets_.size() != m.partition_.group_count()) {
      throw std::invalid_argument("type-m model: subnet count does not match the partition");
    }
    for (std::size_t i = 0; i < m.subnets_.size(); ++i) {
      const auto& spec = m.subnets_[i].spec();
      if (spec.input_dim != m.partition_.groups[i].size() || spec.num_classes != m.prior_.size()) {
        throw std::invalid_argument("type-m model: subnet " + std::to_string(i) +
                                    " does not match its group or the class count");
      }
    }
    return m;
  }

  std::size_t group_count() const { return subnets_.size(); }
  std::size_t input_dim() const { return partition_.feature_count(); }
  std::size_t num_classes() const { return prior_.size(); }
  const SuperfeaturePartition& partition() const { return partition_; }
  const std::vector<double>& prior() const { return prior_; }
  Mlp& subnet(std::size_t m) { return subnets_.at(m); }
  const Mlp& subnet(std::size_t m) const { return subnets_.at(m); }

  void set_prior(std::vector<double> prior) {
    validate_prior(prior, num_classes());
    prior_ = std::move(prior);
  }

  struct Forward {
    Tensor prediction;                 // [batch, C] rows summing to 1
    std::vector<Tensor> explanations;  // M blocks of [batch, C] posteriors
    Tensor total_logit;                // [batch, C]
    std::vector<Tensor> hidden;        // M last-hidden-layer activations
  };

  Forward forward(const Tensor& x, bool want_hidden = false) const {
    if (x.shape().size() != 2 || x.cols() != input_dim()) {
      throw std::invalid_argument("type-m model: input has " + std::to_string(x.cols()) +
                                  " columns, expected " + std::to_string(input_dim()));
    }
    const std::size_t m_count = subnets_.size();
    Forward f;
    Tensor total;
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto& group = partition_.groups[m];
      // The trivial full-range group needs no gather.
      bool identity = group.size() == input_dim();
      for (std::size_t i = 0; identity && i < group.size(); ++i) identity = group[i] == i;
      Tensor xm = identity ? x : slice_columns(x, group);
      Tensor hidden_tap;
      Tensor logit = subnets_[m].logits(xm, want_hidden ? &hidden_tap : nullptr);
      f.explanations.push_back(softmax_rows(logit));
      Tensor lsm = log_softmax_rows(logit);
      total = (m == 0) ? lsm : add(total, lsm);
      if (want_hidden) f.hidden.push_back(hidden_tap);
    }
    if (m_count > 1) {
      std::vector<double> offset(prior_.size());
      const double scale = -static_cast<double>(m_count - 1);
      for (std::size_t c = 0; c < prior_.size(); ++c) {
        offset[c] = scale * std::log(std::max(prior_[c], kLogFloor));
      }
      total = add(total, Tensor::row(std::move(offset)));
      f.total_logit = total;
      f.prediction = softmax_rows(total);
    } else {
      // One factor and a zero prior exponent: the prediction is the sole
      // explanation itself, so reuse the node rather than renormalizing.
      f.total_logit = total;
      f.prediction = f.explanations[0];
    }
    return f;
  }

  Tensor predict_proba(const Tensor& x) const { return forward(x).prediction; }

  // Hard predictions, computed in chunks so huge batches never materialize.
  std::vector<int> predict_classes(const std::vector<double>& features, std::size_t count,
                                   std::size_t chunk = 1024) const {
    const std::size_t d = input_dim();
    if (features.size() != count * d) {
      throw std::invalid_argument("type-m model: feature buffer does not match sample count");
    }
    std::vector<int> out(count);
    for (std::size_t start = 0; start < count; start += chunk) {
      const std::size_t n = std::min(chunk, count - start);
      Tensor batch = Tensor::matrix(
          n, d, std::vector<double>(features.begin() + start * d, features.begin() + (start + n) * d));
      Tensor pred = predict_proba(batch);
      for (std::size_t r = 0; r < n; ++r) {
        const double* row = pred.values().data() + r * num_classes();
        out[start + r] = static_cast<int>(std::max_element(row, row + num_classes()) - row);
      }
    }
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const Mlp& s : subnets_) {
      auto p = s.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  void set_trainable(bool on) {
    for (Mlp& s : subnets_) s.set_trainable(on);
  }

  // Per-class log-probability rows; the callable shape estimate_hessian needs.
  Tensor log_proba(const Tensor& x) const { return log_softmax_rows(forward(x).total_logit); }

 private:
  static void validate_prior(const std::vector<double>& prior, std::size_t num_classes) {
    if (prior.size() != num_classes || num_classes == 0) {
      throw std::invalid_argument("type-m model: prior length must equal the class count");
    }
    double sum = 0.0;
    for (double p : prior) {
      if (p <= 0.0) throw std::invalid_argument("type-m model: prior entries must be positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw std::invalid_argument("type-m model: prior must sum to 1");
    }
  }

  SuperfeaturePartition partition_;
  std::vector<Mlp> subnets_;
  std::vector<double> prior_;
};

// Closed-form parameter count for a type-M model whose subnets share one
// hidden width: M(L-1) n_h^2 + (ML + MC + d) n_h + MC.
inline std::size_t count_params_type_m(std::size_t m, std::size_t layers, std::size_t width,
                                       std::size_t input_dim, std::size_t num_classes) {
  if (m == 0 || layers == 0 || width == 0) {
    throw std::invalid_argument("count_params_type_m: M, L, n_h must be positive");
  }
  return m * (layers - 1) * width * width +
         (m * layers + m * num_classes + input_dim) * width + m * num_classes;
}

inline std::size_t count_params(const TypeMModel& model) {
  std::size_t total = 0;
  for (std::size_t m = 0; m < model.group_count(); ++m) {
    total += count_params(model.subnet(m).spec());
  }
  return total;
}

// Largest shared hidden width whose type-M parameter count stays within the
// budget (positive quadratic root, floored).
inline std::size_t solve_width(std::size_t budget, std::size_t m, std::size_t layers,
                               std::size_t input_dim, std::size_t num_classes) {
  if (m == 0 || layers == 0) throw std::invalid_argument("solve_width: M and L must be positive");
  if (count_params_type_m(m, layers, 1, input_dim, num_classes) > budget) {
    throw std::invalid_argument("solve_width: budget below the minimum width-1 model");
  }
  const double a = static_cast<double>(m * (layers - 1));
  const double b = static_cast<double>(m * layers + m * num_classes + input_dim);
  const double c = static_cast<double>(m * num_classes) - static_cast<double>(budget);
  double root;
  if (a == 0.0) {
    root = -c / b;
  } else {
    root = (-b + std::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
  }
  auto width = static_cast<std::size_t>(std::max(1.0, std::floor(root)));
  // Float round-off guard: walk to the exact boundary.
  while (count_params_type_m(m, layers, width, input_dim, num_classes) > budget) --width;
  while (count_params_type_m(m, layers, width + 1, input_dim, num_classes) <= budget) ++width;
  return width;
}

// Sample average of the model's predicted distributions, floored and
// renormalized so it is a valid prior.
inline std::vector<double> estimate_prior(const TypeMModel& teacher,
                                          const std::vector<double>& features, std::size_t count,
                                          std::size_t chunk = 512) {
  if (count == 0) throw std::invalid_argument("estimate_prior: no samples");
  const std::size_t d = teacher.input_dim();
  const std::size_t c_num = teacher.num_classes();
  if (features.size() != count * d) {
    throw std::invalid_argument("estimate_prior: feature buffer does not match sample count");
  }
  std::vector<double> acc(c_num, 0.0);
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t n = std::min(chunk, count - start);
    Tensor batch = Tensor::matrix(
        n, d, std::vector<double>(features.begin() + start * d, features.begin() + (start + n) * d));
    Tensor pred = teacher.predict_proba(batch);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < c_num; ++j) acc[j] += pred.values()[r * c_num + j];
    }
  }
  double sum = 0.0;
  for (double& v : acc) {
    v = std::max(v / static_cast<double>(count), kLogFloor);
    sum += v;
  }
  for (double& v : acc) v /= sum;
  return acc;
}

}  // namespace ked
