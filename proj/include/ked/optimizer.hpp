// SGD-with-momentum and Adam parameter updates.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ked/tensor.hpp"

namespace ked {

enum class OptimizerKind { sgd_momentum, adam };

// Owns the per-parameter accumulators for a fixed parameter list. Every
// step() consumes populated gradients, applies the update, and zeroes the
// gradients; the step count advances by exactly one.
class Optimizer {
 public:
  static Optimizer sgd(std::vector<Tensor> params, double learning_rate, double momentum = 0.0) {
    Optimizer o(std::move(params), OptimizerKind::sgd_momentum, learning_rate);
    if (momentum < 0.0 || momentum >= 1.0) {
      throw std::invalid_argument("optimizer: momentum must lie in [0,1)");
    }
    o.momentum_ = momentum;
    o.velocity_ = o.zeroed_like_params();
    return o;
  }

  static Optimizer adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9,
                        double beta2 = 0.999, double epsilon = 1e-8) {
    Optimizer o(std::move(params), OptimizerKind::adam, learning_rate);
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
      throw std::invalid_argument("optimizer: betas must lie in [0,1)");
    }
    o.beta1_ = beta1;
    o.beta2_ = beta2;
    o.epsilon_ = epsilon;
    o.first_moment_ = o.zeroed_like_params();
    o.second_moment_ = o.zeroed_like_params();
    return o;
  }

  OptimizerKind kind() const { return kind_; }
  std::uint64_t step_count() const { return step_count_; }

  void step() {
    for (const Tensor& p : params_) {
      if (!p.has_grad()) throw std::runtime_error("optimizer: parameter is missing its gradient");
    }
    ++step_count_;
    if (kind_ == OptimizerKind::sgd_momentum) {
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& v = params_[i].values();
        auto& g = params_[i].raw()->grad;
        auto& vel = velocity_[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
          vel[j] = momentum_ * vel[j] + g[j];
          v[j] -= learning_rate_ * vel[j];
        }
      }
    } else {
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
      for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& v = params_[i].values();
        auto& g = params_[i].raw()->grad;
        auto& m = first_moment_[i];
        auto& s = second_moment_[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
          m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
          s[j] = beta2_ * s[j] + (1.0 - beta2_) * g[j] * g[j];
          const double m_hat = m[j] / bc1;
          const double s_hat = s[j] / bc2;
          v[j] -= learning_rate_ * m_hat / (std::sqrt(s_hat) + epsilon_);
        }
      }
    }
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  Optimizer(std::vector<Tensor> params, OptimizerKind kind, double learning_rate)
      : params_(std::move(params)), kind_(kind), learning_rate_(learning_rate) {
    if (learning_rate <= 0.0) throw std::invalid_argument("optimizer: learning rate must be > 0");
  }

  std::vector<std::vector<double>> zeroed_like_params() const {
    std::vector<std::vector<double>> out;
    out.reserve(params_.size());
    for (const Tensor& p : params_) out.emplace_back(p.size(), 0.0);
    return out;
  }

  std::vector<Tensor> params_;
  OptimizerKind kind_;
  double learning_rate_;
  double momentum_ = 0.0;
  double beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
  std::vector<std::vector<double>> velocity_;
  std::vector<std::vector<double>> first_moment_, second_moment_;
  std::uint64_t step_count_ = 0;
};

}  // namespace ked
