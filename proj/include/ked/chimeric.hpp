// Chimeric composites: stitch block m of a sample from row i_m of the
// training set, independently per block. The teacher's explanation for a
// composite is exactly its per-block explanation of the source rows, so all
// teacher targets come from a one-time per-block cache; no composite is ever
// pushed through the teacher.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "ked/dataset.hpp"
#include "ked/loss.hpp"
#include "ked/model.hpp"
#include "ked/train.hpp"

namespace ked {

class ChimericSampler {
 public:
  ChimericSampler(const Dataset& base, SuperfeaturePartition partition, std::uint64_t seed)
      : partition_(std::move(partition)), rng_(seed) {
    partition_.validate(base.feature_count);
    base.validate();
    feature_count_ = base.feature_count;
    row_count_ = base.sample_count();
    if (row_count_ == 0) throw std::invalid_argument("chimeric: empty base dataset");
    // Per-block feature storage, gathered once.
    blocks_.resize(partition_.groups.size());
    for (std::size_t m = 0; m < partition_.groups.size(); ++m) {
      const auto& group = partition_.groups[m];
      blocks_[m].resize(row_count_ * group.size());
      for (std::size_t r = 0; r < row_count_; ++r) {
        const double* src = base.row(r);
        for (std::size_t j = 0; j < group.size(); ++j) {
          blocks_[m][r * group.size() + j] = src[group[j]];
        }
      }
    }
  }

  std::size_t block_count() const { return partition_.groups.size(); }
  std::size_t row_count() const { return row_count_; }
  const SuperfeaturePartition& partition() const { return partition_; }

  struct Batch {
    std::size_t count = 0;
    std::size_t feature_count = 0;
    std::size_t class_count = 0;
    std::vector<double> features;                       // count x d composites
    std::vector<int> hard_labels;                       // teacher argmax
    std::vector<double> teacher_pred;                   // count x C
    std::vector<std::vector<double>> teacher_expl;      // M blocks of count x C
    std::vector<std::vector<std::size_t>> source_rows;  // count tuples of M row ids
  };

  // n seeded uniform draws from the M-fold product of block rows.
  Batch sample(const TypeMModel& teacher, std::size_t n) {
    if (n == 0) throw std::invalid_argument("chimeric: sample count must be positive");
    ensure_cache(teacher);
    std::uniform_int_distribution<std::size_t> pick(0, row_count_ - 1);
    std::vector<std::vector<std::size_t>> tuples(n, std::vector<std::size_t>(block_count()));
    for (auto& tuple : tuples) {
      for (std::size_t m = 0; m < block_count(); ++m) tuple[m] = pick(rng_);
    }
    return assemble(teacher, tuples);
  }

  // Deterministic composite assembly for explicit row tuples.
  Batch assemble(const TypeMModel& teacher, const std::vector<std::vector<std::size_t>>& tuples) {
    ensure_cache(teacher);
    const std::size_t m_count = block_count();
    const std::size_t c = teacher.num_classes();
    Batch out;
    out.count = tuples.size();
    out.feature_count = feature_count_;
    out.class_count = c;
    out.features.assign(out.count * feature_count_, 0.0);
    out.hard_labels.resize(out.count);
    out.teacher_pred.resize(out.count * c);
    out.teacher_expl.assign(m_count, std::vector<double>(out.count * c));
    out.source_rows = tuples;

    const auto& prior = teacher.prior();
    std::vector<double> logit(c);
    for (std::size_t i = 0; i < out.count; ++i) {
      const auto& tuple = tuples[i];
      if (tuple.size() != m_count) throw std::invalid_argument("chimeric: tuple arity mismatch");
      // Stitch features and accumulate the combined logit in block order,
      // mirroring the model's own forward pass.
      std::fill(logit.begin(), logit.end(), 0.0);
      for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t r = tuple[m];
        if (r >= row_count_) throw std::invalid_argument("chimeric: source row out of range");
        const auto& group = partition_.groups[m];
        for (std::size_t j = 0; j < group.size(); ++j) {
          out.features[i * feature_count_ + group[j]] = blocks_[m][r * group.size() + j];
        }
        const double* lsm = cache_log_[m].data() + r * c;
        for (std::size_t k = 0; k < c; ++k) logit[k] += lsm[k];
        std::copy_n(cache_prob_[m].data() + r * c, c,
                    out.teacher_expl[m].begin() + static_cast<std::ptrdiff_t>(i * c));
      }
      if (m_count > 1) {
        const double correction = static_cast<double>(m_count - 1);
        for (std::size_t k = 0; k < c; ++k) {
          logit[k] -= correction * std::log(std::max(prior[k], kLogFloor));
        }
      }
      double mx = logit[0];
      for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, logit[k]);
      double z = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        logit[k] = std::exp(logit[k] - mx);
        z += logit[k];
      }
      double* pred = out.teacher_pred.data() + i * c;
      for (std::size_t k = 0; k < c; ++k) pred[k] = logit[k] / z;
      out.hard_labels[i] = static_cast<int>(std::max_element(pred, pred + c) - pred);
    }
    return out;
  }

 private:
  void ensure_cache(const TypeMModel& teacher) {
    if (!cache_log_.empty()) return;
    if (teacher.partition().groups != partition_.groups) {
      throw std::invalid_argument("chimeric: teacher partition does not match the sampler");
    }
    const std::size_t c = teacher.num_classes();
    const std::size_t m_count = block_count();
    cache_log_.assign(m_count, std::vector<double>(row_count_ * c));
    cache_prob_.assign(m_count, std::vector<double>(row_count_ * c));
    const std::size_t chunk = 512;
    for (std::size_t m = 0; m < m_count; ++m) {
      const std::size_t width = partition_.groups[m].size();
      for (std::size_t start = 0; start < row_count_; start += chunk) {
        const std::size_t n = std::min(chunk, row_count_ - start);
        Tensor x = Tensor::matrix(
            n, width,
            std::vector<double>(blocks_[m].begin() + static_cast<std::ptrdiff_t>(start * width),
                                blocks_[m].begin() + static_cast<std::ptrdiff_t>((start + n) * width)));
        Tensor logits = teacher.subnet(m).logits(x);
        Tensor lsm = log_softmax_rows(logits);
        Tensor prob = softmax_rows(logits);
        std::copy(lsm.values().begin(), lsm.values().end(),
                  cache_log_[m].begin() + static_cast<std::ptrdiff_t>(start * c));
        std::copy(prob.values().begin(), prob.values().end(),
                  cache_prob_[m].begin() + static_cast<std::ptrdiff_t>(start * c));
      }
    }
  }

  SuperfeaturePartition partition_;
  std::vector<std::vector<double>> blocks_;      // per block: row_count x |group|
  std::vector<std::vector<double>> cache_log_;   // per block: log p(y|x_m)
  std::vector<std::vector<double>> cache_prob_;  // per block: p(y|x_m)
  std::size_t feature_count_ = 0;
  std::size_t row_count_ = 0;
  std::mt19937_64 rng_;
};

// Continues training a distilled student on freshly drawn composites, using
// the distillation loss with the teacher's argmax as the hard label.
inline std::vector<EpochRecord> chimeric_finetune(TypeMModel& student, ChimericSampler& sampler,
                                                  const TypeMModel& teacher,
                                                  const TrainingSchedule& schedule,
                                                  const DistillConfig& cfg,
                                                  std::size_t samples_per_epoch,
                                                  const EpochCallback& on_epoch = nullptr) {
  schedule.validate();
  cfg.validate();
  if (samples_per_epoch == 0) {
    throw std::invalid_argument("chimeric_finetune: samples per epoch must be positive");
  }
  if (student.partition().groups != sampler.partition().groups) {
    throw std::invalid_argument("chimeric_finetune: student partition does not match the sampler");
  }
  const std::size_t m_count = student.group_count();
  const std::size_t c = student.num_classes();

  student.set_trainable(true);
  Optimizer opt = schedule.optimizer == OptimizerKind::adam
                      ? Optimizer::adam(student.parameters(), schedule.learning_rate)
                      : Optimizer::sgd(student.parameters(), schedule.learning_rate,
                                       schedule.momentum);
  for (Tensor& p : student.parameters()) p.zero_grad();

  std::vector<EpochRecord> log;
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t drawn = 0;
    while (drawn < samples_per_epoch) {
      const std::size_t n = std::min(schedule.batch_size, samples_per_epoch - drawn);
      auto batch = sampler.sample(teacher, n);
      Tensor x = Tensor::matrix(n, batch.feature_count, std::move(batch.features));
      auto f = student.forward(x);
      Tensor tpred = Tensor::matrix(n, c, std::move(batch.teacher_pred));
      std::vector<Tensor> texpl;
      texpl.reserve(m_count);
      for (std::size_t m = 0; m < m_count; ++m) {
        texpl.push_back(Tensor::matrix(n, c, std::move(batch.teacher_expl[m])));
      }
      Tensor loss = ked_loss(batch.hard_labels, f.prediction, tpred, f.explanations, texpl, cfg);
      loss.backward();
      loss_sum += loss.value() * static_cast<double>(n);
      opt.step();
      drawn += n;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(samples_per_epoch);
    rec.val_accuracy = std::numeric_limits<double>::quiet_NaN();
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  student.set_trainable(false);
  return log;
}

}  // namespace ked
