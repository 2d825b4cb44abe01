// Mini-batch training for type-M models under the four objectives. Teacher
// targets are computed once per run (the teacher is frozen, so its outputs on
// a fixed split never change) and served per batch as constants.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "ked/dataset.hpp"
#include "ked/loss.hpp"
#include "ked/model.hpp"
#include "ked/optimizer.hpp"

namespace ked {

enum class LossKind { none, kd, ked, ked_hidden };

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::none: return "none";
    case LossKind::kd: return "kd";
    case LossKind::ked: return "ked";
    case LossKind::ked_hidden: return "ked_hidden";
  }
  return "?";
}

struct TrainingSchedule {
  std::size_t epochs = 100;
  std::size_t batch_size = 100;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;  // sgd only
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;  // holdout used only for metric logging

  void validate() const {
    if (epochs == 0 || batch_size == 0) {
      throw std::invalid_argument("schedule: epochs and batch size must be positive");
    }
    if (learning_rate <= 0.0) throw std::invalid_argument("schedule: learning rate must be > 0");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      throw std::invalid_argument("schedule: validation fraction must lie in [0,1)");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;  // NaN when no holdout
  double wall_seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline double accuracy(const TypeMModel& model, const Dataset& ds) {
  if (ds.sample_count() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const auto pred = model.predict_classes(ds.features, ds.sample_count());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += (pred[i] == ds.labels[i]);
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

namespace detail {

// Frozen-teacher outputs over a fixed sample matrix, stored densely.
struct TeacherTargets {
  std::size_t num_classes = 0;
  std::vector<double> pred;                       // K x C
  std::vector<std::vector<double>> expl;          // M blocks of K x C
  std::vector<std::vector<double>> hidden;        // M blocks of K x width_m
  std::vector<std::size_t> hidden_widths;

  static TeacherTargets compute(const TypeMModel& teacher, const Dataset& ds, LossKind kind,
                                std::size_t chunk = 512) {
    TeacherTargets t;
    const std::size_t k = ds.sample_count(), c = teacher.num_classes();
    const std::size_t m_count = teacher.group_count();
    const bool want_expl = kind == LossKind::ked || kind == LossKind::ked_hidden;
    const bool want_hidden = kind == LossKind::ked_hidden;
    t.num_classes = c;
    t.pred.resize(k * c);
    if (want_expl) t.expl.assign(m_count, std::vector<double>(k * c));
    if (want_hidden) {
      t.hidden_widths.resize(m_count);
      t.hidden.resize(m_count);
      for (std::size_t m = 0; m < m_count; ++m) {
        t.hidden_widths[m] = teacher.subnet(m).spec().hidden_widths.back();
        t.hidden[m].resize(k * t.hidden_widths[m]);
      }
    }
    std::vector<std::size_t> idx(chunk);
    for (std::size_t start = 0; start < k; start += chunk) {
      const std::size_t n = std::min(chunk, k - start);
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), start);
      Tensor batch = ds.batch(idx);
      auto f = teacher.forward(batch, want_hidden);
      std::copy(f.prediction.values().begin(), f.prediction.values().end(),
                t.pred.begin() + static_cast<std::ptrdiff_t>(start * c));
      if (want_expl) {
        for (std::size_t m = 0; m < m_count; ++m) {
          std::copy(f.explanations[m].values().begin(), f.explanations[m].values().end(),
                    t.expl[m].begin() + static_cast<std::ptrdiff_t>(start * c));
        }
      }
      if (want_hidden) {
        for (std::size_t m = 0; m < m_count; ++m) {
          std::copy(f.hidden[m].values().begin(), f.hidden[m].values().end(),
                    t.hidden[m].begin() + static_cast<std::ptrdiff_t>(start * t.hidden_widths[m]));
        }
      }
    }
    return t;
  }

  Tensor pred_batch(const std::vector<std::size_t>& rows) const {
    return gather(pred, num_classes, rows);
  }
  Tensor expl_batch(std::size_t m, const std::vector<std::size_t>& rows) const {
    return gather(expl[m], num_classes, rows);
  }
  Tensor hidden_batch(std::size_t m, const std::vector<std::size_t>& rows) const {
    return gather(hidden[m], hidden_widths[m], rows);
  }

  static Tensor gather(const std::vector<double>& mat, std::size_t width,
                       const std::vector<std::size_t>& rows) {
    std::vector<double> buf(rows.size() * width);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(mat.begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                  buf.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    return Tensor::matrix(rows.size(), width, std::move(buf));
  }
};

}  // namespace detail

// Trains the model in place; returns the per-epoch log. A frozen teacher is
// required for every distillation objective and rejected otherwise.
inline std::vector<EpochRecord> train(TypeMModel& model, const Dataset& data, LossKind kind,
                                      const TypeMModel* teacher, const TrainingSchedule& schedule,
                                      const DistillConfig& cfg = {},
                                      const EpochCallback& on_epoch = nullptr) {
  schedule.validate();
  cfg.validate();
  data.validate();
  if (model.input_dim() != data.feature_count || model.num_classes() != data.class_count) {
    throw std::invalid_argument("train: model dimensions do not match the dataset");
  }
  if ((kind == LossKind::none) != (teacher == nullptr)) {
    throw std::invalid_argument("train: a frozen teacher is required exactly when distilling");
  }
  if (teacher) {
    if (teacher->input_dim() != data.feature_count ||
        teacher->num_classes() != data.class_count) {
      throw std::invalid_argument("train: teacher dimensions do not match the dataset");
    }
    if ((kind == LossKind::ked || kind == LossKind::ked_hidden) &&
        teacher->partition().groups != model.partition().groups) {
      throw std::invalid_argument("train: student and teacher partitions must coincide");
    }
  }

  std::mt19937_64 rng(schedule.seed);
  auto [train_split, val_split] = split_dataset(data, schedule.validation_fraction, rng());
  const std::size_t k = train_split.sample_count();
  if (schedule.batch_size > k) {
    throw std::invalid_argument("train: batch size exceeds the training split");
  }

  detail::TeacherTargets targets;
  if (teacher) targets = detail::TeacherTargets::compute(*teacher, train_split, kind);

  std::vector<LinearAdapter> adapters;
  if (kind == LossKind::ked_hidden) {
    std::mt19937_64 adapter_rng(rng());
    for (std::size_t m = 0; m < model.group_count(); ++m) {
      adapters.emplace_back(model.subnet(m).spec().hidden_widths.back(),
                            teacher->subnet(m).spec().hidden_widths.back(), adapter_rng);
    }
  }

  model.set_trainable(true);
  std::vector<Tensor> params = model.parameters();
  for (const LinearAdapter& a : adapters) {
    params.push_back(a.weight);
    params.push_back(a.bias);
  }
  Optimizer opt = schedule.optimizer == OptimizerKind::adam
                      ? Optimizer::adam(params, schedule.learning_rate)
                      : Optimizer::sgd(params, schedule.learning_rate, schedule.momentum);
  for (Tensor& p : params) p.zero_grad();

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochRecord> log;
  log.reserve(schedule.epochs);

  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < k; start += schedule.batch_size) {
      const std::size_t n = std::min(schedule.batch_size, k - start);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(start + n));
      Tensor x = train_split.batch(rows);
      std::vector<int> y = train_split.label_subset(rows);

      auto f = model.forward(x, kind == LossKind::ked_hidden);
      Tensor loss;
      switch (kind) {
        case LossKind::none:
          loss = cross_entropy(y, f.prediction);
          break;
        case LossKind::kd:
          loss = kd_loss(y, f.prediction, targets.pred_batch(rows), cfg);
          break;
        case LossKind::ked: {
          std::vector<Tensor> texpl;
          for (std::size_t m = 0; m < model.group_count(); ++m) {
            texpl.push_back(targets.expl_batch(m, rows));
          }
          loss = ked_loss(y, f.prediction, targets.pred_batch(rows), f.explanations, texpl, cfg);
          break;
        }
        case LossKind::ked_hidden: {
          std::vector<Tensor> texpl, thidden;
          for (std::size_t m = 0; m < model.group_count(); ++m) {
            texpl.push_back(targets.expl_batch(m, rows));
            thidden.push_back(targets.hidden_batch(m, rows));
          }
          loss = ked_hidden_loss(y, f.prediction, targets.pred_batch(rows), f.explanations, texpl,
                                 f.hidden, thidden, adapters, cfg);
          break;
        }
      }
      loss.backward();
      loss_sum += loss.value() * static_cast<double>(n);
      opt.step();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(k);
    rec.val_accuracy = val_split.sample_count() > 0
                           ? accuracy(model, val_split)
                           : std::numeric_limits<double>::quiet_NaN();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.set_trainable(false);
  return log;
}

}  // namespace ked
