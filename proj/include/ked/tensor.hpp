// Dense float64 tensors with reverse-mode differentiation.
//
// Tensors are cheap shared handles onto graph nodes. Operations record a
// backward closure whenever an input has requires_grad set, so calling
// backward() on a scalar loss accumulates d(loss)/d(leaf) into every
// requires_grad leaf. Matrix products are delegated to BLAS; everything
// else is plain loops over contiguous row-major storage.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <cblas.h>

namespace ked {

// Floor applied to probabilities before they are logged (loss terms, priors,
// temperature softmax). Mirrors the usual tiny-bias trick for log(0).
inline constexpr double kProbFloor = 1e-15;

// Guard inside the log primitive itself: keeps log of an exact zero finite
// without distorting any representable positive probability.
inline constexpr double kLogGuard = 1e-300;

using Shape = std::vector<std::size_t>;

namespace detail {

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, same extent as values
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

  std::size_t size() const { return values.size(); }

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }

  static Tensor filled(Shape shape, double v) {
    check_shape(shape);
    auto n = std::make_shared<detail::Node>();
    n->values.assign(detail::shape_size(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, std::vector<double> values) {
    check_shape(shape);
    if (detail::shape_size(shape) != values.size()) {
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + detail::shape_str(shape));
    }
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    return Tensor(std::move(n));
  }

  static Tensor scalar(double v) { return from_values({1}, {v}); }

  // Single-row matrix, shape [1, n].
  static Tensor row(std::vector<double> values) {
    Shape s{1, values.size()};
    return from_values(std::move(s), std::move(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return from_values({rows, cols}, std::move(values));
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node()->shape; }
  std::size_t size() const { return node()->size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::size_t dim(std::size_t i) const {
    const Shape& s = shape();
    if (i >= s.size()) throw std::invalid_argument("tensor: dimension index out of range");
    return s[i];
  }

  bool is_scalar() const { return size() == 1; }

  std::vector<double>& values() { return node()->values; }
  const std::vector<double>& values() const { return node()->values; }

  double value() const {
    if (!is_scalar()) throw std::invalid_argument("tensor: value() requires a scalar");
    return node()->values[0];
  }

  double at(std::size_t r, std::size_t c) const {
    if (shape().size() != 2 || r >= rows() || c >= cols()) {
      throw std::invalid_argument("tensor: at() index out of range");
    }
    return node()->values[r * cols() + c];
  }

  bool requires_grad() const { return node()->requires_grad; }

  Tensor& set_requires_grad(bool on) {
    node()->requires_grad = on;
    if (!on) node()->grad.clear();
    return *this;
  }

  bool has_grad() const { return !node()->grad.empty(); }

  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::runtime_error("tensor: gradient not populated");
    return node()->grad;
  }

  void zero_grad() {
    if (node()->requires_grad) {
      node()->ensure_grad();
      std::fill(node()->grad.begin(), node()->grad.end(), 0.0);
    }
  }

  void clear_grad() { node()->grad.clear(); }

  // Reverse-mode sweep from a scalar. Gradients accumulate: repeated calls
  // without zero_grad() add up.
  void backward() const;

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }
  detail::Node* raw() const { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("tensor: shape must have at least one extent");
    for (std::size_t e : s) {
      if (e == 0) throw std::invalid_argument("tensor: zero extent in shape " + detail::shape_str(s));
    }
  }

  detail::Node* node() const {
    if (!node_) throw std::runtime_error("tensor: empty handle");
    return node_.get();
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline std::shared_ptr<Node> make_result(Shape shape, std::size_t n_values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values.resize(n_values);
  return n;
}

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Attaches the backward closure when grad tracking is needed.
inline void record(const std::shared_ptr<Node>& out, std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> fn) {
  bool track = false;
  for (const auto& p : parents) track = track || p->requires_grad;
  if (!track) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backward_fn = std::move(fn);
}

}  // namespace detail

inline void Tensor::backward() const {
  detail::Node* root = node();
  if (root->size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                detail::shape_str(root->shape));
  }
  // Iterative post-order DFS over parents.
  std::vector<detail::Node*> order;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  std::unordered_set<detail::Node*> seen;
  if (root->requires_grad) {
    stack.emplace_back(root, 0);
    seen.insert(root);
  }
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Leaves keep accumulating across sweeps; interior nodes start each sweep
  // fresh so a repeated backward() adds exactly one more unit of gradient.
  for (detail::Node* n : order) {
    if (n->backward_fn) {
      n->ensure_grad();
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                                " x " + detail::shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = detail::make_result({m, n}, m * n);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a.values().data(), static_cast<int>(k), b.values().data(),
              static_cast<int>(n), 0.0, out->values.data(), static_cast<int>(n));
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::record(out, {pa, pb}, [pa, pb, m, k, n](detail::Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      // dA += dC * B^T
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m),
                  static_cast<int>(k), static_cast<int>(n), 1.0, o.grad.data(),
                  static_cast<int>(n), pb->values.data(), static_cast<int>(n), 1.0,
                  pa->grad.data(), static_cast<int>(k));
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      // dB += A^T * dC
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k),
                  static_cast<int>(n), static_cast<int>(m), 1.0, pa->values.data(),
                  static_cast<int>(k), o.grad.data(), static_cast<int>(n), 1.0, pb->grad.data(),
                  static_cast<int>(n));
    }
  });
  return Tensor(out);
}

namespace detail {

enum class Broadcast { none, b_scalar, a_scalar, b_row };

inline Broadcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.is_scalar()) return Broadcast::b_scalar;
  if (a.is_scalar()) return Broadcast::a_scalar;
  // Row vector over matrix: [m,n] op [1,n].
  if (a.shape().size() == 2 && b.shape().size() == 2 && b.rows() == 1 && b.cols() == a.cols()) {
    return Broadcast::b_row;
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

}  // namespace detail

// Elementwise addition; supports scalar-with-tensor and row-over-matrix
// broadcasting on the right operand.
inline Tensor add(const Tensor& a, const Tensor& b) {
  using detail::Broadcast;
  Broadcast bc = detail::classify_broadcast(a, b, "add");
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  auto out = detail::make_result(big.shape(), big.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = out->values.size();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] + bv[i];
      break;
    case Broadcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] + bv[0];
      break;
    case Broadcast::a_scalar:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[0] + bv[i];
      break;
    case Broadcast::b_row: {
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] + bv[i % cols];
      break;
    }
  }
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::record(out, {pa, pb}, [pa, pb, bc](detail::Node& o) {
    auto push = [&](const std::shared_ptr<detail::Node>& p, bool scalar_side, bool row_side) {
      if (!p->requires_grad) return;
      p->ensure_grad();
      if (scalar_side) {
        double s = 0.0;
        for (double g : o.grad) s += g;
        p->grad[0] += s;
      } else if (row_side) {
        const std::size_t cols = p->values.size();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i % cols] += o.grad[i];
      } else {
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
      }
    };
    push(pa, bc == Broadcast::a_scalar, false);
    push(pb, bc == Broadcast::b_scalar, bc == Broadcast::b_row);
  });
  return Tensor(out);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  using detail::Broadcast;
  Broadcast bc = detail::classify_broadcast(a, b, "sub");
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  auto out = detail::make_result(big.shape(), big.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = out->values.size();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] - bv[i];
      break;
    case Broadcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] - bv[0];
      break;
    case Broadcast::a_scalar:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[0] - bv[i];
      break;
    case Broadcast::b_row: {
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] - bv[i % cols];
      break;
    }
  }
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::record(out, {pa, pb}, [pa, pb, bc](detail::Node& o) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      if (bc == Broadcast::a_scalar) {
        double s = 0.0;
        for (double g : o.grad) s += g;
        pa->grad[0] += s;
      } else {
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      if (bc == Broadcast::b_scalar) {
        double s = 0.0;
        for (double g : o.grad) s += g;
        pb->grad[0] -= s;
      } else if (bc == Broadcast::b_row) {
        const std::size_t cols = pb->values.size();
        for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i % cols] -= o.grad[i];
      } else {
        for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[i] -= o.grad[i];
      }
    }
  });
  return Tensor(out);
}

// Elementwise product (same shape, or scalar on either side).
inline Tensor mul(const Tensor& a, const Tensor& b) {
  using detail::Broadcast;
  Broadcast bc = detail::classify_broadcast(a, b, "mul");
  if (bc == Broadcast::b_row) throw std::invalid_argument("mul: row broadcasting not supported");
  const Tensor& big = (bc == Broadcast::a_scalar) ? b : a;
  auto out = detail::make_result(big.shape(), big.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = out->values.size();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] * bv[i];
      break;
    case Broadcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[i] * bv[0];
      break;
    default:
      for (std::size_t i = 0; i < n; ++i) out->values[i] = av[0] * bv[i];
      break;
  }
  auto pa = a.node_ptr(), pb = b.node_ptr();
  detail::record(out, {pa, pb}, [pa, pb, bc](detail::Node& o) {
    auto side = [&](const std::shared_ptr<detail::Node>& p, const std::shared_ptr<detail::Node>& q,
                    bool p_scalar, bool q_scalar) {
      if (!p->requires_grad) return;
      p->ensure_grad();
      if (p_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i) s += o.grad[i] * q->values[i];
        p->grad[0] += s;
      } else if (q_scalar) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i] * q->values[0];
      } else {
        for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i] * q->values[i];
      }
    };
    side(pa, pb, bc == Broadcast::a_scalar, bc == Broadcast::b_scalar);
    side(pb, pa, bc == Broadcast::b_scalar, bc == Broadcast::a_scalar);
  });
  return Tensor(out);
}

// Multiplication by a compile-time-constant factor (no graph edge for c).
inline Tensor scale(const Tensor& a, double c) {
  auto out = detail::make_result(a.shape(), a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] * c;
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, c](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * c;
  });
  return Tensor(out);
}

inline Tensor relu(const Tensor& a) {
  auto out = detail::make_result(a.shape(), a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = av[i] > 0.0 ? av[i] : 0.0;
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (pa->values[i] > 0.0) pa->grad[i] += o.grad[i];
    }
  });
  return Tensor(out);
}

// Natural log; arguments at or below kLogGuard are clamped so an exact zero
// stays finite. Clamped entries have zero gradient.
inline Tensor log(const Tensor& a) {
  auto out = detail::make_result(a.shape(), a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::log(std::max(av[i], kLogGuard));
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (pa->values[i] > kLogGuard) pa->grad[i] += o.grad[i] / pa->values[i];
    }
  });
  return Tensor(out);
}

// Elementwise max with a constant floor; gradient passes only above it.
inline Tensor clamp_min(const Tensor& a, double floor) {
  auto out = detail::make_result(a.shape(), a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::max(av[i], floor);
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, floor](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (pa->values[i] > floor) pa->grad[i] += o.grad[i];
    }
  });
  return Tensor(out);
}

inline Tensor exp(const Tensor& a) {
  auto out = detail::make_result(a.shape(), a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out->values[i] = std::exp(av[i]);
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i] * o.values[i];
  });
  return Tensor(out);
}

inline Tensor sum(const Tensor& a) {
  auto out = detail::make_result({1}, 1);
  out->values[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa](detail::Node& o) {
    pa->ensure_grad();
    for (double& g : pa->grad) g += o.grad[0];
  });
  return Tensor(out);
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  auto out = detail::make_result({1}, 1);
  out->values[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0) * inv;
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, inv](detail::Node& o) {
    pa->ensure_grad();
    for (double& g : pa->grad) g += o.grad[0] * inv;
  });
  return Tensor(out);
}

// Gathers an arbitrary subset of columns (need not be contiguous).
inline Tensor slice_columns(const Tensor& a, const std::vector<std::size_t>& cols) {
  if (a.shape().size() != 2) throw std::invalid_argument("slice_columns: expects a matrix");
  if (cols.empty()) throw std::invalid_argument("slice_columns: empty column set");
  const std::size_t m = a.rows(), n = a.cols(), w = cols.size();
  for (std::size_t c : cols) {
    if (c >= n) throw std::invalid_argument("slice_columns: column index " + std::to_string(c) +
                                            " out of range for " + detail::shape_str(a.shape()));
  }
  auto out = detail::make_result({m, w}, m * w);
  const auto& av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < w; ++j) out->values[r * w + j] = av[r * n + cols[j]];
  }
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, cols, m, n, w](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < w; ++j) pa->grad[r * n + cols[j]] += o.grad[r * w + j];
    }
  });
  return Tensor(out);
}

inline Tensor concat_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_columns: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != 2 || p.rows() != m) {
      throw std::invalid_argument("concat_columns: row counts differ");
    }
    total += p.cols();
  }
  auto out = detail::make_result({m, total}, m * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(p.values().begin() + r * w, w, out->values.begin() + r * total + off);
    }
    off += w;
  }
  std::vector<std::shared_ptr<detail::Node>> parents;
  for (const Tensor& p : parts) parents.push_back(p.node_ptr());
  detail::record(out, parents, [parents, m, total](detail::Node& o) {
    std::size_t off = 0;
    for (const auto& p : parents) {
      const std::size_t w = p->values.size() / m;
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t j = 0; j < w; ++j) p->grad[r * w + j] += o.grad[r * total + off + j];
        }
      }
      off += w;
    }
  });
  return Tensor(out);
}

// Row-wise softmax with max-shift for stability.
inline Tensor softmax_rows(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("softmax_rows: expects a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  auto out = detail::make_result({m, n}, m * n);
  const auto& av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = av.data() + r * n;
    double* o = out->values.data() + r * n;
    double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, m, n](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = o.values.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) pa->grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
  return Tensor(out);
}

inline Tensor log_softmax_rows(const Tensor& a) {
  if (a.shape().size() != 2) throw std::invalid_argument("log_softmax_rows: expects a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  auto out = detail::make_result({m, n}, m * n);
  const auto& av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = av.data() + r * n;
    double* o = out->values.data() + r * n;
    double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(in[j] - mx);
    const double lz = std::log(z) + mx;
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lz;
  }
  auto pa = a.node_ptr();
  detail::record(out, {pa}, [pa, m, n](detail::Node& o) {
    pa->ensure_grad();
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = o.values.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double gsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) gsum += g[j];
      for (std::size_t j = 0; j < n; ++j) pa->grad[r * n + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
  return Tensor(out);
}

// d(log p[output_index]) / dx for a frozen model, evaluated at one sample.
// forward must map a [1,d] batch to [1,C] per-class log-probabilities.
inline std::vector<double> input_gradient(
    const std::function<Tensor(const Tensor&)>& forward, const std::vector<double>& x,
    std::size_t output_index) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("input_gradient: non-finite input");
  }
  Tensor in = Tensor::matrix(1, x.size(), x);
  in.set_requires_grad(true);
  Tensor out = forward(in);
  if (out.shape().size() != 2 || out.rows() != 1) {
    throw std::invalid_argument("input_gradient: model output must be a single row");
  }
  if (output_index >= out.cols()) {
    throw std::invalid_argument("input_gradient: output index " + std::to_string(output_index) +
                                " out of range for " + std::to_string(out.cols()) + " classes");
  }
  Tensor picked = sum(slice_columns(out, {output_index}));
  picked.backward();
  return in.grad();
}

}  // namespace ked
