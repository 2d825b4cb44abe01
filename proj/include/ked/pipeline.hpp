// Experiment orchestration: ingest -> black-box teacher -> superfeatures ->
// explaining teacher -> distilled students -> chimeric fine-tune -> bootstrap
// evaluation. Every stage persists its artifact tagged with the config hash
// and is skipped on re-runs while the hash still matches, so an interrupted
// pipeline resumes where it stopped. Stage randomness derives from the global
// seed and the stage name.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ked/bootstrap.hpp"
#include "ked/chimeric.hpp"
#include "ked/config.hpp"
#include "ked/dataset.hpp"
#include "ked/serialize.hpp"
#include "ked/superfeature.hpp"
#include "ked/synthetic.hpp"
#include "ked/train.hpp"

namespace ked {

struct StageError : std::runtime_error {
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_name(stage) {}
  std::string stage_name;
};

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, bool verbose = true)
      : cfg_(std::move(cfg)), verbose_(verbose) {
    std::filesystem::create_directories(out());
    std::filesystem::create_directories(out() / "metrics");
  }

  const ExperimentConfig& config() const { return cfg_; }
  std::filesystem::path out() const { return cfg_.out; }

  // ---- stage: ingest -----------------------------------------------------
  void ingest() { guarded("ingest", [&] { ingest_impl(); }); }

  // ---- stage: train-teacher ----------------------------------------------
  void train_teacher() { guarded("train-teacher", [&] { train_teacher_impl(); }); }

  // ---- stage: find-superfeatures -------------------------------------------
  void find_superfeatures() { guarded("find-superfeatures", [&] { find_superfeatures_impl(); }); }

  // ---- stage: train-explaining-teacher -------------------------------------
  void train_explaining_teacher() {
    guarded("train-explaining-teacher", [&] { train_explaining_teacher_impl(); });
  }

  // ---- stage: distill ------------------------------------------------------
  void distill() { guarded("distill", [&] { distill_impl(); }); }

  // ---- stage: chimeric-finetune --------------------------------------------
  void chimeric_finetune() { guarded("chimeric-finetune", [&] { chimeric_impl(); }); }

  // ---- stage: evaluate -----------------------------------------------------
  std::vector<EvaluationReport> evaluate() {
    std::vector<EvaluationReport> reports;
    guarded("evaluate", [&] { reports = evaluate_impl(); });
    return reports;
  }

  std::vector<EvaluationReport> run_all() {
    ingest();
    train_teacher();
    find_superfeatures();
    train_explaining_teacher();
    distill();
    if (cfg_.chimeric_enabled) chimeric_finetune();
    return evaluate();
  }

  // Paths of the persisted artifacts.
  std::string train_path() const { return (out() / "data_train.kedd").string(); }
  std::string test_path() const { return (out() / "data_test.kedd").string(); }
  std::string student_path() const {
    return cfg_.student_split == 0 ? train_path() : (out() / "data_student.kedd").string();
  }
  std::string actual_partition_path() const { return (out() / "partition_actual.txt").string(); }
  std::string partition_path() const { return (out() / "partition.txt").string(); }
  std::string w_matrix_path() const { return (out() / "W.txt").string(); }
  std::string teacher_path() const { return (out() / "teacher_blackbox.kedm").string(); }
  std::string typem_teacher_path() const { return (out() / "teacher_typem.kedm").string(); }
  std::string student_model_path(const std::string& variant) const {
    return (out() / ("student_" + variant + ".kedm")).string();
  }
  std::string chimeric_model_path() const { return (out() / "student_ked_chimeric.kedm").string(); }
  std::string reports_path() const { return (out() / "reports.jsonl").string(); }
  std::string table_path() const { return (out() / "report_table.txt").string(); }
  std::string failures_path() const { return (out() / "failures.jsonl").string(); }

 private:
  template <typename Fn>
  void guarded(const std::string& stage, Fn&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      record_failure(stage, e.what());
      throw StageError(stage, e.what());
    }
  }

  void record_failure(const std::string& stage, const std::string& what) {
    nlohmann::json j{{"stage", stage},
                     {"error", what},
                     {"config_hash", cfg_.config_hash},
                     {"unix_time", std::chrono::duration_cast<std::chrono::seconds>(
                                       std::chrono::system_clock::now().time_since_epoch())
                                       .count()}};
    std::ofstream f(failures_path(), std::ios::app);
    f << j.dump() << "\n";
  }

  void note(const std::string& msg) const {
    if (verbose_) std::cerr << "[ked] " << msg << "\n";
  }

  bool dataset_current(const std::string& path) const {
    if (!std::filesystem::exists(path)) return false;
    try {
      return io::read_container(path, "KEDD").config_hash == cfg_.config_hash;
    } catch (const std::exception&) {
      return false;
    }
  }

  std::optional<TypeMModel> try_load_model(const std::string& path) const {
    if (!std::filesystem::exists(path)) return std::nullopt;
    LoadedModel loaded = load_model(path);
    if (loaded.config_hash != cfg_.config_hash) return std::nullopt;
    return std::move(loaded.model);
  }

  // Loads a stage-input model, insisting the artifact belongs to this config.
  TypeMModel require_model(const std::string& path) const {
    if (!std::filesystem::exists(path)) {
      throw std::runtime_error("missing artifact " + path + " (run the earlier stages first)");
    }
    LoadedModel loaded = load_model(path);
    if (loaded.config_hash != cfg_.config_hash) {
      throw std::runtime_error(path + ": artifact was produced under config hash " +
                               std::to_string(loaded.config_hash) + ", current config hashes to " +
                               std::to_string(cfg_.config_hash) +
                               " (stale artifact rejected; re-run the producing stage)");
    }
    return std::move(loaded.model);
  }

  EpochCallback metrics_sink(const std::string& run_id) {
    const std::string path = (out() / "metrics" / (run_id + ".jsonl")).string();
    std::ofstream(path, std::ios::trunc);  // fresh file per (re)run
    return [path, run_id](const EpochRecord& rec) {
      nlohmann::json j{{"run_id", run_id},
                       {"epoch", rec.epoch},
                       {"loss", rec.train_loss},
                       {"val_accuracy", std::isnan(rec.val_accuracy)
                                            ? nlohmann::json(nullptr)
                                            : nlohmann::json(rec.val_accuracy)},
                       {"wall_seconds", rec.wall_seconds}};
      std::ofstream f(path, std::ios::app);
      f << j.dump() << "\n";
    };
  }

  // ---- implementations ----------------------------------------------------

  void ingest_impl() {
    if (dataset_current(train_path()) && dataset_current(test_path()) &&
        (cfg_.student_split == 0 || dataset_current(student_path()))) {
      note("ingest: artifacts current, skipping");
      return;
    }
    Dataset train, test;
    switch (cfg_.dataset_kind) {
      case DatasetKind::idx: {
        train = load_idx(cfg_.train_images, cfg_.train_labels);
        test = load_idx(cfg_.test_images, cfg_.test_labels);
        break;
      }
      case DatasetKind::csv: {
        CsvSchema schema;
        schema.standardize = false;  // statistics must come from the train split only
        Dataset all = load_csv(cfg_.csv_path, cfg_.label_column, schema);
        auto [tr, te] = split_dataset(all, cfg_.csv_test_fraction, derive_seed(cfg_.seed, "ingest"));
        Standardizer stats = Standardizer::fit(tr);
        stats.apply(tr);
        stats.apply(te);
        train = std::move(tr);
        test = std::move(te);
        break;
      }
      case DatasetKind::synthetic: {
        auto gen = gen_synthetic_independent(
            cfg_.synthetic_m,
            std::vector<std::size_t>(cfg_.synthetic_m, cfg_.synthetic_group_size),
            cfg_.synthetic_classes, cfg_.synthetic_train + cfg_.synthetic_test,
            derive_seed(cfg_.seed, "ingest"));
        // One generative model; the tail becomes the test split.
        Dataset& all = gen.data;
        auto take = [&](std::size_t begin, std::size_t end) {
          Dataset d;
          d.feature_count = all.feature_count;
          d.class_count = all.class_count;
          d.shift = all.shift;
          d.scale = all.scale;
          d.features.assign(all.features.begin() + static_cast<std::ptrdiff_t>(begin * all.feature_count),
                            all.features.begin() + static_cast<std::ptrdiff_t>(end * all.feature_count));
          d.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                          all.labels.begin() + static_cast<std::ptrdiff_t>(end));
          return d;
        };
        train = take(0, cfg_.synthetic_train);
        test = take(cfg_.synthetic_train, cfg_.synthetic_train + cfg_.synthetic_test);
        save_partition(gen.partition, train.feature_count, actual_partition_path());
        break;
      }
      case DatasetKind::combined: {
        Dataset f_train = load_idx(cfg_.first_train_images, cfg_.first_train_labels);
        Dataset f_test = load_idx(cfg_.first_test_images, cfg_.first_test_labels);
        Dataset s_train = load_idx(cfg_.second_train_images, cfg_.second_train_labels);
        Dataset s_test = load_idx(cfg_.second_test_images, cfg_.second_test_labels);
        if (cfg_.combined_downsample > 1) {
          const auto side = static_cast<std::size_t>(std::lround(std::sqrt(
              static_cast<double>(f_train.feature_count))));
          f_train = downsample_images(f_train, side, side, cfg_.combined_downsample);
          f_test = downsample_images(f_test, side, side, cfg_.combined_downsample);
          s_train = downsample_images(s_train, side, side, cfg_.combined_downsample);
          s_test = downsample_images(s_test, side, side, cfg_.combined_downsample);
        }
        auto [tr, actual] = combine_mnist_fashion(f_train, s_train, derive_seed(cfg_.seed, "ingest"));
        auto [te, actual_test] =
            combine_mnist_fashion(f_test, s_test, derive_seed(cfg_.seed, "ingest-test"));
        train = std::move(tr);
        test = std::move(te);
        save_partition(actual, train.feature_count, actual_partition_path());
        break;
      }
    }
    save_dataset(train, train_path(), cfg_.config_hash);
    save_dataset(test, test_path(), cfg_.config_hash);
    if (cfg_.student_split > 0) {
      Dataset student = subsample(train, cfg_.student_split, derive_seed(cfg_.seed, "student-split"));
      save_dataset(student, student_path(), cfg_.config_hash);
    }
    note("ingest: train " + std::to_string(train.sample_count()) + ", test " +
         std::to_string(test.sample_count()) + ", d " + std::to_string(train.feature_count) +
         ", C " + std::to_string(train.class_count));
  }

  void train_teacher_impl() {
    if (try_load_model(teacher_path())) {
      note("train-teacher: artifact current, skipping");
      return;
    }
    Dataset train = load_dataset(train_path());
    std::mt19937_64 rng(derive_seed(cfg_.seed, "teacher-init"));
    MLPSpec spec{train.feature_count, cfg_.teacher_hidden, train.class_count};
    TypeMModel teacher = TypeMModel::black_box(spec, rng);
    auto schedule = cfg_.teacher_schedule("teacher-train");
    train_model(teacher, train, LossKind::none, nullptr, schedule, "teacher_blackbox");
    save_model(teacher, teacher_path(), cfg_.config_hash);
  }

  void find_superfeatures_impl() {
    if (std::filesystem::exists(partition_path())) {
      try {
        Dataset train = load_dataset(train_path());
        load_partition(partition_path(), train.feature_count);
        if (partition_hash_current()) {
          note("find-superfeatures: artifact current, skipping");
          return;
        }
      } catch (const std::exception&) {
        // fall through and recompute
      }
    }
    Dataset train = load_dataset(train_path());
    const std::size_t d = train.feature_count;
    SuperfeaturePartition partition;
    nlohmann::json meta;
    switch (cfg_.superfeature_source) {
      case SuperfeatureSource::algorithm: {
        TypeMModel teacher = require_model(teacher_path());
        const std::size_t n = std::min<std::size_t>(cfg_.hessian_samples, train.sample_count());
        Dataset subset = subsample(train, n, derive_seed(cfg_.seed, "hessian"));
        HessianEstimate h = estimate_hessian(teacher, subset, cfg_.hessian_fd_step);
        DependencyMatrix w = build_dependency_matrix(h);
        save_dependency_matrix(w, w_matrix_path());
        ResolutionTuning tuned =
            tune_resolution(w, cfg_.m, cfg_.resolution_step, cfg_.resolution_max,
                            derive_seed(cfg_.seed, "louvain"));
        partition = tuned.partition;
        meta["resolution"] = tuned.resolution;
        meta["repaired"] = tuned.repaired;
        meta["communities_before_repair"] = tuned.communities_before_repair;
        meta["cross_block_mass"] = cross_block_mass(w, partition);
        meta["hessian_samples"] = h.sample_count;
        break;
      }
      case SuperfeatureSource::actual: {
        partition = load_partition(actual_partition_path(), d);
        break;
      }
      case SuperfeatureSource::random: {
        partition = SuperfeaturePartition::random(d, cfg_.m, derive_seed(cfg_.seed, "random-partition"));
        break;
      }
      case SuperfeatureSource::file: {
        partition = load_partition(cfg_.superfeature_file, d);
        break;
      }
    }
    partition.canonicalize();
    partition.validate(d);
    save_partition(partition, d, partition_path());
    meta["groups"] = partition.groups.size();
    meta["config_hash"] = cfg_.config_hash;
    std::ofstream((out() / "superfeatures.json").string()) << meta.dump(2) << "\n";
    note("find-superfeatures: " + std::to_string(partition.groups.size()) + " groups");
  }

  void train_explaining_teacher_impl() {
    if (try_load_model(typem_teacher_path())) {
      note("train-explaining-teacher: artifact current, skipping");
      return;
    }
    Dataset train = load_dataset(train_path());
    TypeMModel black_box = require_model(teacher_path());
    SuperfeaturePartition partition = load_partition(partition_path(), train.feature_count);

    const std::size_t budget = count_params(black_box);
    const std::size_t depth = cfg_.teacher_hidden.size();
    const std::size_t width = solve_width(budget, partition.groups.size(), depth,
                                          train.feature_count, train.class_count);
    std::vector<double> prior;
    if (cfg_.uniform_prior) {
      prior.assign(train.class_count, 1.0 / static_cast<double>(train.class_count));
    } else {
      prior = estimate_prior(black_box, train.features, train.sample_count());
    }
    std::mt19937_64 rng(derive_seed(cfg_.seed, "typem-init"));
    TypeMModel teacher(partition, std::vector<std::size_t>(depth, width), train.class_count,
                       std::move(prior), rng);
    note("train-explaining-teacher: M=" + std::to_string(partition.groups.size()) + ", width " +
         std::to_string(width) + " (budget " + std::to_string(budget) + ")");
    auto schedule = cfg_.teacher_schedule("typem-train");
    train_model(teacher, train, LossKind::none, nullptr, schedule, "teacher_typem");
    save_model(teacher, typem_teacher_path(), cfg_.config_hash);
  }

  void distill_impl() {
    Dataset student_data = load_dataset(student_path());
    SuperfeaturePartition partition =
        load_partition(partition_path(), student_data.feature_count);
    const std::size_t d = student_data.feature_count;
    const std::size_t classes = student_data.class_count;
    const std::size_t depth =
        cfg_.student_hidden.empty() ? cfg_.teacher_hidden.size() : cfg_.student_hidden.size();
    const std::size_t budget = cfg_.student_budget > 0
                                   ? cfg_.student_budget
                                   : count_params(MLPSpec{d, cfg_.student_hidden, classes});
    std::vector<std::size_t> black_box_hidden = cfg_.student_hidden;
    if (black_box_hidden.empty()) {
      black_box_hidden.assign(depth, solve_width(budget, 1, depth, d, classes));
    }
    const std::size_t typem_width = solve_width(budget, partition.groups.size(), depth, d, classes);

    for (const std::string& variant : cfg_.variants) {
      const std::string path = student_model_path(variant);
      if (try_load_model(path)) {
        note("distill: " + variant + " current, skipping");
        continue;
      }
      std::mt19937_64 rng(derive_seed(cfg_.seed, "student-init-" + variant));
      auto schedule = cfg_.student_schedule("student-train-" + variant);
      TypeMModel student;
      std::optional<TypeMModel> teacher;
      LossKind kind = LossKind::none;
      if (variant == "nodistill" || variant == "kd") {
        student = TypeMModel::black_box(MLPSpec{d, black_box_hidden, classes}, rng);
        if (variant == "kd") {
          teacher = require_model(teacher_path());
          kind = LossKind::kd;
        }
      } else {  // ked, ked_hidden
        TypeMModel typem_teacher = require_model(typem_teacher_path());
        student = TypeMModel(partition, std::vector<std::size_t>(depth, typem_width), classes,
                             typem_teacher.prior(), rng);
        teacher = std::move(typem_teacher);
        kind = variant == "ked" ? LossKind::ked : LossKind::ked_hidden;
      }
      train_model(student, student_data, kind, teacher ? &*teacher : nullptr, schedule,
                  "student_" + variant);
      save_model(student, path, cfg_.config_hash);
    }
  }

  void chimeric_impl() {
    if (try_load_model(chimeric_model_path())) {
      note("chimeric-finetune: artifact current, skipping");
      return;
    }
    Dataset student_data = load_dataset(student_path());
    TypeMModel teacher = require_model(typem_teacher_path());
    TypeMModel student = require_model(student_model_path("ked"));
    ChimericSampler sampler(student_data, teacher.partition(), derive_seed(cfg_.seed, "chimeric"));
    TrainingSchedule schedule;
    schedule.epochs = cfg_.chimeric_epochs;
    schedule.batch_size = cfg_.chimeric_batch;
    schedule.learning_rate = cfg_.learning_rate;
    schedule.optimizer = cfg_.optimizer;
    schedule.momentum = cfg_.momentum;
    schedule.seed = derive_seed(cfg_.seed, "chimeric-train");
    schedule.validation_fraction = 0.0;
    auto sink = metrics_sink("student_ked_chimeric");
    const auto t0 = std::chrono::steady_clock::now();
    ked::chimeric_finetune(student, sampler, teacher, schedule, cfg_.distill,
                           cfg_.chimeric_samples, sink);
    note("chimeric-finetune: " + std::to_string(cfg_.chimeric_epochs) + " epochs in " +
         std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
         "s");
    save_model(student, chimeric_model_path(), cfg_.config_hash);
  }

  std::vector<EvaluationReport> evaluate_impl() {
    Dataset test = load_dataset(test_path());
    std::vector<std::pair<std::string, std::string>> candidates = {
        {"teacher_blackbox", teacher_path()},
        {"teacher_typem", typem_teacher_path()},
    };
    for (const std::string& variant : cfg_.variants) {
      candidates.emplace_back("student_" + variant, student_model_path(variant));
    }
    if (cfg_.chimeric_enabled) {
      candidates.emplace_back("student_ked_chimeric", chimeric_model_path());
    }
    std::vector<EvaluationReport> reports;
    for (const auto& [name, path] : candidates) {
      if (!std::filesystem::exists(path)) continue;
      TypeMModel model = require_model(path);
      EvaluationReport r = evaluate_bootstrap(model, test, cfg_.eval_replicates,
                                              derive_seed(cfg_.seed, "evaluate-" + name));
      r.run_id = name;
      r.config_hash = cfg_.config_hash;
      reports.push_back(std::move(r));
      note("evaluate: " + name + " " + std::to_string(reports.back().accuracy));
    }
    if (reports.empty()) throw std::runtime_error("no model artifacts to evaluate");
    std::ofstream jsonl(reports_path(), std::ios::trunc);
    for (const auto& r : reports) jsonl << r.to_json().dump() << "\n";
    std::ofstream(table_path(), std::ios::trunc) << comparison_table(reports);
    return reports;
  }

  bool partition_hash_current() const {
    const std::string meta_path = (out() / "superfeatures.json").string();
    if (!std::filesystem::exists(meta_path)) return false;
    try {
      std::ifstream in(meta_path);
      nlohmann::json meta = nlohmann::json::parse(in);
      return meta.value("config_hash", std::uint64_t{0}) == cfg_.config_hash;
    } catch (const std::exception&) {
      return false;
    }
  }

  void train_model(TypeMModel& model, const Dataset& data, LossKind kind,
                   const TypeMModel* teacher, const TrainingSchedule& schedule,
                   const std::string& run_id) {
    auto sink = metrics_sink(run_id);
    const auto t0 = std::chrono::steady_clock::now();
    auto log = train(model, data, kind, teacher, schedule, cfg_.distill, sink);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << run_id << ": " << log.size() << " epochs in " << std::fixed << std::setprecision(1)
       << secs << "s, final loss " << std::setprecision(4) << log.back().train_loss;
    if (!std::isnan(log.back().val_accuracy)) {
      os << ", val acc " << std::setprecision(4) << log.back().val_accuracy;
    }
    note(os.str());
  }

  ExperimentConfig cfg_;
  bool verbose_;
};

}  // namespace ked
