#include "ked/tensor.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ked/optimizer.hpp"

namespace {

using ked::Tensor;

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Central-difference oracle: numeric d(f)/d(x_i) for a scalar-valued f that
// rebuilds its graph on every call.
template <typename Fn>
std::vector<double> fd_gradient(const Fn& f, std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -2.0,
                                  double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

TEST(TensorForward, ReluDefinition) {
  Tensor t = ked::relu(Tensor::row({-1.0, 0.0, 2.0}));
  EXPECT_EQ(t.values(), (std::vector<double>{0.0, 0.0, 2.0}));
}

TEST(TensorForward, MatmulIdentity) {
  Tensor eye = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(7);
  Tensor a = Tensor::matrix(3, 3, random_vector(9, rng));
  Tensor out = ked::matmul(eye, a);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(out.values()[i], a.values()[i]);
}

TEST(TensorForward, SoftmaxHandValue) {
  // exp(0) / (exp(0) + 3) = 0.25 and 3 / 4 = 0.75
  Tensor out = ked::softmax_rows(Tensor::row({0.0, std::log(3.0)}));
  EXPECT_NEAR(out.values()[0], 0.25, 1e-12);
  EXPECT_NEAR(out.values()[1], 0.75, 1e-12);
}

TEST(TensorForward, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::matrix(4, 6, random_vector(24, rng, -50.0, 50.0));
    Tensor s = ked::softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        const double v = s.values()[r * 6 + c];
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(TensorForward, LogSoftmaxMatchesLogOfSoftmax) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::matrix(3, 5, random_vector(15, rng, -50.0, 50.0));
    Tensor a = ked::log_softmax_rows(x);
    Tensor b = ked::log(ked::softmax_rows(x));
    for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-9);
  }
}

TEST(TensorForward, LogGuardsZeroArgument) {
  Tensor out = ked::log(Tensor::row({0.0, 1.0}));
  EXPECT_DOUBLE_EQ(out.values()[0], std::log(ked::kLogFloor));
  EXPECT_DOUBLE_EQ(out.values()[1], 0.0);
  EXPECT_TRUE(std::isfinite(out.values()[0]));
}

TEST(TensorForward, ShapeErrors) {
  EXPECT_THROW(ked::matmul(Tensor::matrix(2, 3, std::vector<double>(6, 0.0)),
                           Tensor::matrix(2, 3, std::vector<double>(6, 0.0))),
               std::invalid_argument);
  EXPECT_THROW(ked::add(Tensor::row({1, 2}), Tensor::row({1, 2, 3})), std::invalid_argument);
  EXPECT_THROW(ked::slice_columns(Tensor::matrix(2, 2, {1, 2, 3, 4}), {5}),
               std::invalid_argument);
  EXPECT_THROW(ked::concat_columns({}), std::invalid_argument);
}

TEST(TensorBackward, SquareGradient) {
  Tensor x = Tensor::row({3.0});
  x.set_requires_grad(true);
  Tensor loss = ked::sum(ked::mul(x, x));
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(TensorBackward, IndependentLeafKeepsZeroGrad) {
  Tensor x = Tensor::row({1.0, 2.0});
  x.set_requires_grad(true);
  x.zero_grad();
  Tensor y = Tensor::row({4.0});
  y.set_requires_grad(true);
  Tensor loss = ked::sum(ked::mul(y, y));
  loss.backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{0.0, 0.0}));
}

TEST(TensorBackward, RepeatedBackwardAccumulates) {
  Tensor x = Tensor::row({2.0});
  x.set_requires_grad(true);
  Tensor loss = ked::sum(ked::mul(x, x));
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);  // 2 sweeps of d(x^2)/dx = 4
}

TEST(TensorBackward, NonScalarLossRejected) {
  Tensor x = Tensor::row({1.0, 2.0});
  x.set_requires_grad(true);
  Tensor y = ked::mul(x, x);
  EXPECT_THROW(y.backward(), std::invalid_argument);
}

// Every primitive inside one differentiable composite, checked against the
// central-difference oracle on many random instances.
TEST(TensorBackward, PrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    const std::vector<double> x0 = random_vector(8, rng, 0.2, 2.0);  // positive: feeds log
    auto f = [](const std::vector<double>& v) {
      Tensor x = Tensor::matrix(2, 4, v);
      x.set_requires_grad(true);
      Tensor w = Tensor::matrix(2, 2, {0.3, -0.7, 1.1, 0.4});
      Tensor part = ked::slice_columns(x, {0, 2});
      Tensor joined = ked::concat_columns({ked::relu(part), ked::exp(ked::scale(part, 0.3))});
      Tensor mixed = ked::matmul(ked::log(ked::slice_columns(x, {1, 3})), w);
      Tensor row = Tensor::row({0.5, -0.25});
      Tensor shifted = ked::add(mixed, row);
      Tensor probs = ked::softmax_rows(shifted);
      Tensor lsm = ked::log_softmax_rows(ked::sub(joined, Tensor::scalar(0.1)));
      return (ked::mean(ked::mul(probs, probs)).value() + ked::sum(lsm).value() * 0.01);
    };
    auto g = [](const std::vector<double>& v) {
      Tensor x = Tensor::matrix(2, 4, v);
      x.set_requires_grad(true);
      Tensor w = Tensor::matrix(2, 2, {0.3, -0.7, 1.1, 0.4});
      Tensor part = ked::slice_columns(x, {0, 2});
      Tensor joined = ked::concat_columns({ked::relu(part), ked::exp(ked::scale(part, 0.3))});
      Tensor mixed = ked::matmul(ked::log(ked::slice_columns(x, {1, 3})), w);
      Tensor row = Tensor::row({0.5, -0.25});
      Tensor shifted = ked::add(mixed, row);
      Tensor probs = ked::softmax_rows(shifted);
      Tensor lsm = ked::log_softmax_rows(ked::sub(joined, Tensor::scalar(0.1)));
      Tensor loss = ked::add(ked::mean(ked::mul(probs, probs)),
                             ked::scale(ked::sum(lsm), 0.01));
      loss.backward();
      return x.grad();
    };
    const auto analytic = g(x0);
    const auto numeric = fd_gradient([&](const std::vector<double>& v) { return f(v); }, x0);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      EXPECT_LT(rel_err(analytic[i], numeric[i]), 1e-4) << "coordinate " << i;
    }
  }
}

// Two-layer MLP crossentropy-style loss, gradient checked against finite
// differences with respect to every weight and bias.
TEST(TensorBackward, MlpLossMatchesFiniteDifferences) {
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t d = 5, h = 4, c = 3, batch = 3;
    const auto xv = random_vector(batch * d, rng);
    const auto labels = std::vector<std::size_t>{0, 2, 1};
    // Parameter vector: W1 | b1 | W2 | b2
    const std::size_t n_params = d * h + h + h * c + c;
    auto params = random_vector(n_params, rng, -0.8, 0.8);

    auto loss_value = [&](const std::vector<double>& p) {
      auto it = p.begin();
      Tensor w1 = Tensor::matrix(d, h, {it, it + d * h});
      it += d * h;
      Tensor b1 = Tensor::matrix(1, h, {it, it + h});
      it += h;
      Tensor w2 = Tensor::matrix(h, c, {it, it + h * c});
      it += h * c;
      Tensor b2 = Tensor::matrix(1, c, {it, it + c});
      for (Tensor* t : {&w1, &b1, &w2, &b2}) t->set_requires_grad(true);
      Tensor x = Tensor::matrix(batch, d, xv);
      Tensor hidden = ked::relu(ked::add(ked::matmul(x, w1), b1));
      Tensor logits = ked::add(ked::matmul(hidden, w2), b2);
      Tensor lsm = ked::log_softmax_rows(logits);
      std::vector<double> mask(batch * c, 0.0);
      for (std::size_t r = 0; r < batch; ++r) mask[r * c + labels[r]] = -1.0 / batch;
      Tensor loss = ked::sum(ked::mul(Tensor::matrix(batch, c, mask), lsm));
      return std::pair{loss, std::vector<Tensor>{w1, b1, w2, b2}};
    };

    auto [loss, tensors] = loss_value(params);
    loss.backward();
    std::vector<double> analytic;
    for (const Tensor& t : tensors) {
      analytic.insert(analytic.end(), t.grad().begin(), t.grad().end());
    }
    const auto numeric = fd_gradient(
        [&](const std::vector<double>& p) { return loss_value(p).first.value(); }, params);
    for (std::size_t i = 0; i < n_params; ++i) {
      EXPECT_LT(rel_err(analytic[i], numeric[i]), 1e-4) << "parameter " << i;
    }
  }
}

TEST(TensorBackward, BroadcastGradients) {
  std::mt19937_64 rng(303);
  const auto xv = random_vector(6, rng);
  auto run = [&](const std::vector<double>& rowv) {
    Tensor x = Tensor::matrix(2, 3, xv);
    Tensor row = Tensor::row(rowv);
    row.set_requires_grad(true);
    Tensor loss = ked::mean(ked::mul(ked::add(x, row), ked::add(x, row)));
    loss.backward();
    return std::pair{loss.value(), row.grad()};
  };
  const auto row0 = random_vector(3, rng);
  const auto analytic = run(row0).second;
  const auto numeric =
      fd_gradient([&](const std::vector<double>& v) { return run(v).first; }, row0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rel_err(analytic[i], numeric[i]), 1e-6);
}

TEST(InputGradient, LinearModelIsExact) {
  const std::vector<double> w = {0.5, -1.25, 2.0};
  auto forward = [&](const Tensor& x) {
    return ked::matmul(x, Tensor::matrix(3, 1, w));
  };
  const auto g = ked::input_gradient(forward, {0.3, 0.9, -0.8}, 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], w[i]);
}

TEST(InputGradient, ConstantModelIsZero) {
  auto forward = [](const Tensor& x) {
    return ked::add(ked::scale(ked::matmul(x, Tensor::matrix(4, 2, std::vector<double>(8, 1.0))), 0.0),
                    Tensor::row({0.4, 0.6}));
  };
  const auto g = ked::input_gradient(forward, {1.0, 2.0, 3.0, 4.0}, 1);
  for (double v : g) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(InputGradient, RandomMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(404);
  const std::size_t d = 5, h = 6, c = 3;
  const auto w1 = random_vector(d * h, rng, -0.7, 0.7);
  const auto b1 = random_vector(h, rng, -0.3, 0.3);
  const auto w2 = random_vector(h * c, rng, -0.7, 0.7);
  auto forward = [&](const Tensor& x) {
    Tensor hidden = ked::relu(ked::add(ked::matmul(x, Tensor::matrix(d, h, w1)),
                                       Tensor::matrix(1, h, b1)));
    return ked::log_softmax_rows(ked::matmul(hidden, Tensor::matrix(h, c, w2)));
  };
  const auto x0 = random_vector(d, rng);
  for (std::size_t cls = 0; cls < c; ++cls) {
    const auto analytic = ked::input_gradient(forward, x0, cls);
    const auto numeric = fd_gradient(
        [&](const std::vector<double>& v) {
          Tensor out = forward(Tensor::matrix(1, d, v));
          return out.values()[cls];
        },
        x0);
    for (std::size_t i = 0; i < d; ++i) EXPECT_LT(rel_err(analytic[i], numeric[i]), 1e-4);
  }
  EXPECT_THROW(ked::input_gradient(forward, x0, 3), std::invalid_argument);
}

TEST(Optimizer, SgdPlainStep) {
  Tensor p = Tensor::row({1.0});
  p.set_requires_grad(true);
  auto opt = ked::Optimizer::sgd({p}, 0.1, 0.0);
  p.zero_grad();
  p.raw()->grad[0] = 2.0;
  opt.step();
  EXPECT_DOUBLE_EQ(p.values()[0], 0.8);
  EXPECT_EQ(opt.step_count(), 1u);
  EXPECT_DOUBLE_EQ(p.grad()[0], 0.0);  // grads zeroed after the update
}

TEST(Optimizer, AdamFirstStepMatchesRecurrence) {
  const double lr = 0.1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, g = 2.0;
  Tensor p = Tensor::row({1.0});
  p.set_requires_grad(true);
  auto opt = ked::Optimizer::adam({p}, lr, beta1, beta2, eps);
  p.zero_grad();
  p.raw()->grad[0] = g;
  opt.step();
  // One step of the published recurrence, evaluated directly.
  const double m_hat = ((1 - beta1) * g) / (1 - beta1);
  const double v_hat = ((1 - beta2) * g * g) / (1 - beta2);
  const double expected = 1.0 - lr * m_hat / (std::sqrt(v_hat) + eps);
  EXPECT_NEAR(p.values()[0], expected, 1e-15);
}

TEST(Optimizer, ZeroGradLeavesParamUnchanged) {
  Tensor p = Tensor::row({1.5});
  p.set_requires_grad(true);
  auto opt = ked::Optimizer::adam({p}, 0.01);
  p.zero_grad();
  opt.step();
  EXPECT_DOUBLE_EQ(p.values()[0], 1.5);
}

TEST(Optimizer, MissingGradRejected) {
  Tensor p = Tensor::row({1.0});
  p.set_requires_grad(true);
  auto opt = ked::Optimizer::sgd({p}, 0.1);
  EXPECT_THROW(opt.step(), std::runtime_error);
}

TEST(Optimizer, MomentumAccumulates) {
  Tensor p = Tensor::row({0.0});
  p.set_requires_grad(true);
  auto opt = ked::Optimizer::sgd({p}, 1.0, 0.5);
  p.zero_grad();
  p.raw()->grad[0] = 1.0;
  opt.step();  // vel = 1, p = -1
  p.raw()->grad[0] = 1.0;
  opt.step();  // vel = 1.5, p = -2.5
  EXPECT_DOUBLE_EQ(p.values()[0], -2.5);
}

// Same seed, same data: the whole update trajectory must be bit-identical.
TEST(Determinism, AdamTrajectoryIsReproducible) {
  auto run = [] {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> init(12);
    for (double& v : init) v = dist(rng);
    Tensor w = Tensor::matrix(3, 4, init);
    w.set_requires_grad(true);
    auto opt = ked::Optimizer::adam({w}, 0.01);
    for (int step = 0; step < 25; ++step) {
      w.zero_grad();
      Tensor loss = ked::mean(ked::mul(w, w));
      loss.backward();
      opt.step();
    }
    return w.values();
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a, b);
}

}  // namespace
