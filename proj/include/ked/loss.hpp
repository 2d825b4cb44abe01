// Distillation objectives: plain crossentropy, prediction distillation,
// prediction + explanation distillation, and the hidden-representation
// augmented variant. All losses are batch-averaged graph nodes, so gradients
// flow into whatever student tensors were used to produce the inputs.
// Teacher-side inputs are expected to be constants (no grad tracking).

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ked/tensor.hpp"

namespace ked {

struct DistillConfig {
  double temperature = 10.0;  // T, applied to predictions
  double tau = 10.0;          // applied to explanations
  double lambda = 0.7;
  double mu = 0.7;
  double rho = 0.7;

  void validate() const {
    if (temperature <= 0.0 || tau <= 0.0) {
      throw std::invalid_argument("distill config: temperatures must be positive");
    }
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(lambda) || !in_unit(mu) || !in_unit(rho)) {
      throw std::invalid_argument("distill config: lambda, mu, rho must lie in [0,1]");
    }
  }
};

// Re-normalizes distribution rows after dividing their logs by T. T = 1 is
// the identity on a distribution.
inline Tensor temperature_softmax(const Tensor& p, double temperature) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("temperature_softmax: temperature must be positive");
  }
  return softmax_rows(scale(log(p), 1.0 / temperature));
}

namespace detail {

inline void check_same_rows(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// Mean over the batch of -log p(label); probabilities floored at kLogFloor.
inline Tensor cross_entropy(const std::vector<int>& labels, const Tensor& pred) {
  if (pred.shape().size() != 2 || labels.size() != pred.rows()) {
    throw std::invalid_argument("cross_entropy: label count does not match batch rows");
  }
  const std::size_t c = pred.cols();
  std::vector<double> one_hot(labels.size() * c, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::invalid_argument("cross_entropy: label out of range at row " + std::to_string(i));
    }
    one_hot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor mask = Tensor::matrix(labels.size(), c, std::move(one_hot));
  return scale(sum(mul(mask, log(pred))), -1.0 / static_cast<double>(labels.size()));
}

// Mean over the batch of KL(p || q) with p the (constant) target rows.
inline Tensor kl_divergence(const Tensor& target, const Tensor& predicted) {
  detail::check_same_rows(target, predicted, "kl_divergence");
  Tensor diff = sub(log(target), log(predicted));
  return scale(sum(mul(target, diff)), 1.0 / static_cast<double>(target.rows()));
}

// (1-lambda) CE + T^2 lambda KL(sigma_T(teacher) || sigma_T(student)).
inline Tensor kd_loss(const std::vector<int>& labels, const Tensor& student_pred,
                      const Tensor& teacher_pred, const DistillConfig& cfg) {
  cfg.validate();
  detail::check_same_rows(teacher_pred, student_pred, "kd_loss");
  const double t2 = cfg.temperature * cfg.temperature;
  Tensor loss = scale(cross_entropy(labels, student_pred), 1.0 - cfg.lambda);
  Tensor kl = kl_divergence(temperature_softmax(teacher_pred, cfg.temperature),
                            temperature_softmax(student_pred, cfg.temperature));
  return add(loss, scale(kl, t2 * cfg.lambda));
}

// Adds the per-superfeature explanation matching term:
//   (1-lambda) CE
// + T^2 lambda (1-mu) KL on predictions
// + tau^2 lambda mu / M * sum_m KL on explanations.
inline Tensor ked_loss(const std::vector<int>& labels, const Tensor& student_pred,
                       const Tensor& teacher_pred, const std::vector<Tensor>& student_expl,
                       const std::vector<Tensor>& teacher_expl, const DistillConfig& cfg) {
  cfg.validate();
  if (student_expl.empty() || student_expl.size() != teacher_expl.size()) {
    throw std::invalid_argument("ked_loss: explanation block counts differ");
  }
  detail::check_same_rows(teacher_pred, student_pred, "ked_loss");
  const std::size_t m_count = student_expl.size();
  const double t2 = cfg.temperature * cfg.temperature;
  const double tau2 = cfg.tau * cfg.tau;

  Tensor loss = scale(cross_entropy(labels, student_pred), 1.0 - cfg.lambda);
  Tensor pred_kl = kl_divergence(temperature_softmax(teacher_pred, cfg.temperature),
                                 temperature_softmax(student_pred, cfg.temperature));
  loss = add(loss, scale(pred_kl, t2 * cfg.lambda * (1.0 - cfg.mu)));

  Tensor expl_sum;
  for (std::size_t m = 0; m < m_count; ++m) {
    Tensor kl = kl_divergence(temperature_softmax(teacher_expl[m], cfg.tau),
                              temperature_softmax(student_expl[m], cfg.tau));
    expl_sum = (m == 0) ? kl : add(expl_sum, kl);
  }
  return add(loss, scale(expl_sum, tau2 * cfg.lambda * cfg.mu / static_cast<double>(m_count)));
}

// Learned linear map aligning a student hidden block with the teacher's width.
struct LinearAdapter {
  Tensor weight;  // [student_width, teacher_width]
  Tensor bias;    // [1, teacher_width]

  LinearAdapter() = default;

  LinearAdapter(std::size_t student_width, std::size_t teacher_width, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(student_width));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> w(student_width * teacher_width);
    for (double& x : w) x = u(rng);
    weight = Tensor::matrix(student_width, teacher_width, std::move(w));
    bias = Tensor::matrix(1, teacher_width, std::vector<double>(teacher_width, 0.0));
    weight.set_requires_grad(true);
    bias.set_requires_grad(true);
  }

  Tensor apply(const Tensor& h) const { return add(matmul(h, weight), bias); }

  std::vector<Tensor> parameters() const { return {weight, bias}; }
};

// Squared-error hidden block term, averaged over block elements.
inline Tensor hidden_mse(const Tensor& teacher_hidden, const Tensor& adapted_student_hidden) {
  detail::check_same_rows(teacher_hidden, adapted_student_hidden, "hidden_mse");
  Tensor diff = sub(teacher_hidden, adapted_student_hidden);
  return mean(mul(diff, diff));
}

// Full objective with hidden-representation matching:
//   (1-lambda) CE
// + T^2 lambda (1-mu) KL on predictions
// + tau^2 lambda mu (1-rho) / M * sum_m KL on explanations
// + lambda mu rho / M * sum_m MSE(teacher hidden, adapter(student hidden)).
inline Tensor ked_hidden_loss(const std::vector<int>& labels, const Tensor& student_pred,
                              const Tensor& teacher_pred, const std::vector<Tensor>& student_expl,
                              const std::vector<Tensor>& teacher_expl,
                              const std::vector<Tensor>& student_hidden,
                              const std::vector<Tensor>& teacher_hidden,
                              const std::vector<LinearAdapter>& adapters,
                              const DistillConfig& cfg) {
  cfg.validate();
  const std::size_t m_count = student_expl.size();
  if (m_count == 0 || teacher_expl.size() != m_count || student_hidden.size() != m_count ||
      teacher_hidden.size() != m_count || adapters.size() != m_count) {
    throw std::invalid_argument("ked_hidden_loss: per-superfeature block counts differ");
  }
  detail::check_same_rows(teacher_pred, student_pred, "ked_hidden_loss");
  const double t2 = cfg.temperature * cfg.temperature;
  const double tau2 = cfg.tau * cfg.tau;

  Tensor loss = scale(cross_entropy(labels, student_pred), 1.0 - cfg.lambda);
  Tensor pred_kl = kl_divergence(temperature_softmax(teacher_pred, cfg.temperature),
                                 temperature_softmax(student_pred, cfg.temperature));
  loss = add(loss, scale(pred_kl, t2 * cfg.lambda * (1.0 - cfg.mu)));

  Tensor expl_sum, hidden_sum;
  for (std::size_t m = 0; m < m_count; ++m) {
    Tensor kl = kl_divergence(temperature_softmax(teacher_expl[m], cfg.tau),
                              temperature_softmax(student_expl[m], cfg.tau));
    expl_sum = (m == 0) ? kl : add(expl_sum, kl);
    Tensor mse = hidden_mse(teacher_hidden[m], adapters[m].apply(student_hidden[m]));
    hidden_sum = (m == 0) ? mse : add(hidden_sum, mse);
  }
  const double inv_m = 1.0 / static_cast<double>(m_count);
  loss = add(loss, scale(expl_sum, tau2 * cfg.lambda * cfg.mu * (1.0 - cfg.rho) * inv_m));
  return add(loss, scale(hidden_sum, cfg.lambda * cfg.mu * cfg.rho * inv_m));
}

}  // namespace ked
