// Plain fully connected relu networks.

#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ked/tensor.hpp"

namespace ked {

struct MLPSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_widths;
  std::size_t num_classes = 0;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("mlp spec: input_dim must be positive");
    if (num_classes == 0) throw std::invalid_argument("mlp spec: num_classes must be positive");
    if (hidden_widths.empty()) throw std::invalid_argument("mlp spec: needs at least one hidden layer");
    for (std::size_t w : hidden_widths) {
      if (w == 0) throw std::invalid_argument("mlp spec: zero hidden width");
    }
  }
};

// Exact weight + bias count by layer enumeration. Unlike model construction
// this also covers the degenerate no-hidden-layer (single linear map) case.
inline std::size_t count_params(const MLPSpec& spec) {
  if (spec.input_dim == 0 || spec.num_classes == 0) {
    throw std::invalid_argument("count_params: dimensions must be positive");
  }
  std::size_t total = 0;
  std::size_t prev = spec.input_dim;
  for (std::size_t w : spec.hidden_widths) {
    if (w == 0) throw std::invalid_argument("count_params: zero hidden width");
    total += prev * w + w;
    prev = w;
  }
  total += prev * spec.num_classes + spec.num_classes;
  return total;
}

class Mlp {
 public:
  Mlp() = default;

  // He-style uniform fan-in init for relu layers; biases start at zero.
  Mlp(MLPSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
    spec_.validate();
    std::size_t prev = spec_.input_dim;
    auto dims = spec_.hidden_widths;
    dims.push_back(spec_.num_classes);
    for (std::size_t w : dims) {
      const double bound = std::sqrt(6.0 / static_cast<double>(prev));
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> wv(prev * w);
      for (double& x : wv) x = u(rng);
      weights_.push_back(Tensor::matrix(prev, w, std::move(wv)));
      biases_.push_back(Tensor::matrix(1, w, std::vector<double>(w, 0.0)));
      prev = w;
    }
  }

  // Rebuilds a network from stored parameter matrices ([in,out] weights and
  // [1,out] biases per layer, hidden layers first).
  static Mlp from_parameters(MLPSpec spec, std::vector<Tensor> weights, std::vector<Tensor> biases) {
    spec.validate();
    Mlp m;
    m.spec_ = std::move(spec);
    auto dims = m.spec_.hidden_widths;
    dims.push_back(m.spec_.num_classes);
    if (weights.size() != dims.size() || biases.size() != dims.size()) {
      throw std::invalid_argument("mlp: layer count does not match the spec");
    }
    std::size_t prev = m.spec_.input_dim;
    for (std::size_t l = 0; l < dims.size(); ++l) {
      if (weights[l].shape() != Shape{prev, dims[l]} || biases[l].shape() != Shape{1, dims[l]}) {
        throw std::invalid_argument("mlp: parameter shape mismatch at layer " + std::to_string(l));
      }
      prev = dims[l];
    }
    m.weights_ = std::move(weights);
    m.biases_ = std::move(biases);
    return m;
  }

  const MLPSpec& spec() const { return spec_; }
  std::size_t layer_count() const { return weights_.size(); }

  // Pre-softmax class scores; x is a [batch, input_dim] matrix. When
  // last_hidden is given it receives the activation of the final hidden
  // layer (the tap used for hidden-representation matching).
  Tensor logits(const Tensor& x, Tensor* last_hidden = nullptr) const {
    if (x.shape().size() != 2 || x.cols() != spec_.input_dim) {
      throw std::invalid_argument("mlp: input has " + std::to_string(x.cols()) +
                                  " columns, expected " + std::to_string(spec_.input_dim));
    }
    Tensor h = x;
    for (std::size_t l = 0; l + 1 < weights_.size(); ++l) {
      h = relu(add(matmul(h, weights_[l]), biases_[l]));
    }
    if (last_hidden) *last_hidden = h;
    return add(matmul(h, weights_.back()), biases_.back());
  }

  Tensor predict_proba(const Tensor& x) const { return softmax_rows(logits(x)); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back(weights_[l]);
      out.push_back(biases_[l]);
    }
    return out;
  }

  void set_trainable(bool on) {
    for (Tensor& t : weights_) t.set_requires_grad(on);
    for (Tensor& t : biases_) t.set_requires_grad(on);
  }

  Tensor& weight(std::size_t layer) { return weights_.at(layer); }
  Tensor& bias(std::size_t layer) { return biases_.at(layer); }
  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }

 private:
  MLPSpec spec_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace ked
