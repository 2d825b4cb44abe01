// Synthetic classification data whose feature groups are conditionally
// independent given the class: each group is drawn from its own unit-variance
// class-conditional Gaussian. Because the generative model is known, exact
// per-group and joint posteriors come for free, which is what makes the
// log-space combination rule testable without any training.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ked/dataset.hpp"
#include "ked/model.hpp"

namespace ked {

struct SyntheticOracle {
  std::vector<double> prior;                          // length C
  std::vector<std::vector<double>> group_posteriors;  // M matrices, K x C row-major
  std::vector<double> joint_posterior;                // K x C row-major
  std::vector<std::vector<double>> class_means;       // C rows of length d (concatenated groups)
};

struct SyntheticData {
  Dataset data;
  SuperfeaturePartition partition;
  SyntheticOracle oracle;
};

namespace detail {

inline void softmax_inplace(double* logits, std::size_t n) {
  double mx = logits[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    logits[i] = std::exp(logits[i] - mx);
    z += logits[i];
  }
  for (std::size_t i = 0; i < n; ++i) logits[i] /= z;
}

}  // namespace detail

inline SyntheticData gen_synthetic_independent(std::size_t m_count,
                                               const std::vector<std::size_t>& group_sizes,
                                               std::size_t num_classes, std::size_t sample_count,
                                               std::uint64_t seed) {
  if (group_sizes.size() != m_count || m_count == 0) {
    throw std::invalid_argument("synthetic: group size list must have M entries");
  }
  for (std::size_t s : group_sizes) {
    if (s == 0) throw std::invalid_argument("synthetic: group sizes must be positive");
  }
  if (num_classes < 2 || sample_count == 0) {
    throw std::invalid_argument("synthetic: need C >= 2 and K >= 1");
  }
  std::size_t dim = 0;
  for (std::size_t s : group_sizes) dim += s;

  SyntheticData out;
  out.partition.groups.resize(m_count);
  std::size_t off = 0;
  for (std::size_t m = 0; m < m_count; ++m) {
    out.partition.groups[m].resize(group_sizes[m]);
    std::iota(out.partition.groups[m].begin(), out.partition.groups[m].end(), off);
    off += group_sizes[m];
  }

  // Deliberately non-uniform prior so the prior-correction term matters.
  out.oracle.prior.resize(num_classes);
  double prior_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    out.oracle.prior[c] = static_cast<double>(c + 2);
    prior_sum += out.oracle.prior[c];
  }
  for (double& p : out.oracle.prior) p /= prior_sum;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mean_dist(-2.0, 2.0);
  out.oracle.class_means.assign(num_classes, std::vector<double>(dim));
  for (auto& row : out.oracle.class_means) {
    for (double& v : row) v = mean_dist(rng);
  }

  std::discrete_distribution<int> label_dist(out.oracle.prior.begin(), out.oracle.prior.end());
  std::normal_distribution<double> noise(0.0, 1.0);
  out.data.feature_count = dim;
  out.data.class_count = num_classes;
  out.data.features.resize(sample_count * dim);
  out.data.labels.resize(sample_count);
  for (std::size_t i = 0; i < sample_count; ++i) {
    const int y = label_dist(rng);
    out.data.labels[i] = y;
    double* row = out.data.features.data() + i * dim;
    const auto& mu = out.oracle.class_means[static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < dim; ++j) row[j] = mu[j] + noise(rng);
  }
  out.data.shift.assign(dim, 0.0);
  out.data.scale.assign(dim, 1.0);

  // Exact posteriors. For unit-variance Gaussians,
  //   log p(y | x_m) = log prior_y - ||x_m - mu_{m,y}||^2 / 2 + const,
  // normalized per row; the joint stacks the group distances.
  out.oracle.group_posteriors.assign(m_count,
                                     std::vector<double>(sample_count * num_classes, 0.0));
  out.oracle.joint_posterior.assign(sample_count * num_classes, 0.0);
  for (std::size_t i = 0; i < sample_count; ++i) {
    const double* row = out.data.row(i);
    std::vector<double> joint_logit(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      joint_logit[c] = std::log(out.oracle.prior[c]);
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      std::vector<double> logit(num_classes);
      for (std::size_t c = 0; c < num_classes; ++c) {
        double dist2 = 0.0;
        for (std::size_t j : out.partition.groups[m]) {
          const double dv = row[j] - out.oracle.class_means[c][j];
          dist2 += dv * dv;
        }
        logit[c] = std::log(out.oracle.prior[c]) - 0.5 * dist2;
        joint_logit[c] -= 0.5 * dist2;
      }
      detail::softmax_inplace(logit.data(), num_classes);
      std::copy(logit.begin(), logit.end(),
                out.oracle.group_posteriors[m].begin() +
                    static_cast<std::ptrdiff_t>(i * num_classes));
    }
    detail::softmax_inplace(joint_logit.data(), num_classes);
    std::copy(joint_logit.begin(), joint_logit.end(),
              out.oracle.joint_posterior.begin() + static_cast<std::ptrdiff_t>(i * num_classes));
  }
  return out;
}

// Applies the log-space combination rule to per-group posterior rows:
// softmax over sum_m log p(y|x_m) - (M-1) log prior.
inline std::vector<double> combine_group_posteriors(
    const std::vector<std::vector<double>>& group_rows, const std::vector<double>& prior) {
  const std::size_t num_classes = prior.size();
  std::vector<double> logit(num_classes, 0.0);
  for (const auto& row : group_rows) {
    if (row.size() != num_classes) {
      throw std::invalid_argument("combine: posterior row length mismatch");
    }
    for (std::size_t c = 0; c < num_classes; ++c) {
      logit[c] += std::log(std::max(row[c], kLogFloor));
    }
  }
  const double correction = static_cast<double>(group_rows.size()) - 1.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    logit[c] -= correction * std::log(std::max(prior[c], kLogFloor));
  }
  detail::softmax_inplace(logit.data(), num_classes);
  return logit;
}

}  // namespace ked
