// Experiment configuration: a flat key = value document (hash comments, blank
// lines ignored), overridable one key at a time from the command line. Keys
// are strictly checked so typos surface as configuration errors, and the
// canonical serialization is hashed to tag every artifact a run produces.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ked/loss.hpp"
#include "ked/optimizer.hpp"
#include "ked/serialize.hpp"
#include "ked/train.hpp"

namespace ked {

// Configuration problems map to CLI exit code 2; runtime stage failures to 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class KvConfig {
 public:
  static KvConfig parse_text(const std::string& text, const std::string& origin = "<memory>") {
    KvConfig kv;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
      }
      kv.values_[key] = value;
    }
    return kv;
  }

  static KvConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str(), path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end() || it->second.empty()) {
      throw ConfigError("missing required config key '" + key + "'");
    }
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "': '" + it->second + "' is not a number");
    }
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "': '" + it->second + "' is not an integer");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + it->second + "'");
  }

  std::vector<std::size_t> get_size_list(const std::string& key,
                                         const std::vector<std::size_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      if (cell.empty()) continue;
      try {
        out.push_back(std::stoull(cell));
      } catch (...) {
        throw ConfigError("config key '" + key + "': '" + cell + "' is not an integer");
      }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell = trim(cell);
      if (!cell.empty()) out.push_back(cell);
    }
    return out;
  }

  // Canonical serialization (sorted keys), hashed to tag artifacts. The
  // output directory does not influence the hash.
  std::uint64_t content_hash() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) {
      if (k == "out") continue;
      os << k << '=' << v << '\n';
    }
    return io::fnv1a64(os.str());
  }

 private:
  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
  }

  std::map<std::string, std::string> values_;
};

// Stage seeds derive from the global seed and the stage name, so adding or
// reordering stages never perturbs another stage's randomness.
inline std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& stage) {
  std::uint64_t h = io::fnv1a64(stage) ^ (global_seed * 0x9e3779b97f4a7c15ull);
  // splitmix64 finalizer
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebull;
  h ^= h >> 31;
  return h;
}

enum class DatasetKind { idx, csv, synthetic, combined };
enum class SuperfeatureSource { algorithm, actual, random, file };

struct ExperimentConfig {
  DatasetKind dataset_kind = DatasetKind::idx;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // csv
  std::string csv_path, label_column;
  double csv_test_fraction = 0.2;
  // combined (two idx sources)
  std::string first_train_images, first_train_labels, first_test_images, first_test_labels;
  std::string second_train_images, second_train_labels, second_test_images, second_test_labels;
  std::size_t combined_downsample = 1;  // mean-pool factor per image side
  // synthetic
  std::size_t synthetic_m = 2, synthetic_group_size = 4, synthetic_classes = 3;
  std::size_t synthetic_train = 4000, synthetic_test = 2000;

  std::size_t student_split = 0;  // 0 = train on the full set

  std::vector<std::size_t> teacher_hidden{500, 500};
  std::vector<std::size_t> student_hidden{20, 20};
  std::size_t student_budget = 0;  // exclusive with student_hidden

  std::size_t m = 4;
  bool uniform_prior = false;

  SuperfeatureSource superfeature_source = SuperfeatureSource::algorithm;
  std::string superfeature_file;
  std::size_t hessian_samples = 1000;
  double hessian_fd_step = 1e-3;
  double resolution_step = 0.01;
  double resolution_max = 10.0;

  DistillConfig distill;
  std::vector<std::string> variants{"nodistill", "kd", "ked"};

  std::size_t teacher_epochs = 100, teacher_batch = 500;
  std::size_t student_epochs = 100, student_batch = 100;
  double learning_rate = 0.001;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double validation_fraction = 0.1;

  bool chimeric_enabled = false;
  std::size_t chimeric_samples = 1000000;
  std::size_t chimeric_epochs = 5;
  std::size_t chimeric_batch = 100;

  std::size_t eval_replicates = 2000;
  std::string out = "runs/default";
  std::uint64_t seed = 1;

  std::uint64_t config_hash = 0;  // canonical hash of the source document

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "dataset.kind", "dataset.train_images", "dataset.train_labels", "dataset.test_images",
        "dataset.test_labels", "dataset.csv_path", "dataset.label_column",
        "dataset.csv_test_fraction", "combined.first_train_images", "combined.first_train_labels",
        "combined.first_test_images", "combined.first_test_labels", "combined.second_train_images",
        "combined.second_train_labels", "combined.second_test_images", "combined.second_test_labels",
        "combined.downsample", "synthetic.m", "synthetic.group_size", "synthetic.classes",
        "synthetic.train_count", "synthetic.test_count", "student.split", "teacher.hidden",
        "student.hidden", "student.budget", "m", "typem.uniform_prior", "superfeature.source",
        "superfeature.file", "hessian.samples", "hessian.fd_step", "resolution.step",
        "resolution.max", "distill.temperature", "distill.tau", "distill.lambda", "distill.mu",
        "distill.rho", "distill.variants", "train.teacher_epochs", "train.teacher_batch",
        "train.student_epochs", "train.student_batch", "train.learning_rate", "train.optimizer",
        "train.momentum", "train.validation_fraction", "chimeric.enabled",
        "chimeric.samples_per_epoch", "chimeric.epochs", "chimeric.batch", "eval.replicates",
        "out", "seed"};
    return keys;
  }

  static ExperimentConfig from_kv(const KvConfig& kv) {
    for (const auto& [key, value] : kv.values()) {
      const auto& keys = known_keys();
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
    ExperimentConfig c;
    const std::string kind = kv.get_string("dataset.kind", "idx");
    if (kind == "idx") {
      c.dataset_kind = DatasetKind::idx;
      c.train_images = kv.require_string("dataset.train_images");
      c.train_labels = kv.require_string("dataset.train_labels");
      c.test_images = kv.require_string("dataset.test_images");
      c.test_labels = kv.require_string("dataset.test_labels");
    } else if (kind == "csv") {
      c.dataset_kind = DatasetKind::csv;
      c.csv_path = kv.require_string("dataset.csv_path");
      c.label_column = kv.require_string("dataset.label_column");
      c.csv_test_fraction = kv.get_double("dataset.csv_test_fraction", 0.2);
      if (c.csv_test_fraction <= 0.0 || c.csv_test_fraction >= 1.0) {
        throw ConfigError("dataset.csv_test_fraction must lie in (0,1)");
      }
    } else if (kind == "synthetic") {
      c.dataset_kind = DatasetKind::synthetic;
      c.synthetic_m = kv.get_u64("synthetic.m", 2);
      c.synthetic_group_size = kv.get_u64("synthetic.group_size", 4);
      c.synthetic_classes = kv.get_u64("synthetic.classes", 3);
      c.synthetic_train = kv.get_u64("synthetic.train_count", 4000);
      c.synthetic_test = kv.get_u64("synthetic.test_count", 2000);
    } else if (kind == "combined") {
      c.dataset_kind = DatasetKind::combined;
      c.first_train_images = kv.require_string("combined.first_train_images");
      c.first_train_labels = kv.require_string("combined.first_train_labels");
      c.first_test_images = kv.require_string("combined.first_test_images");
      c.first_test_labels = kv.require_string("combined.first_test_labels");
      c.second_train_images = kv.require_string("combined.second_train_images");
      c.second_train_labels = kv.require_string("combined.second_train_labels");
      c.second_test_images = kv.require_string("combined.second_test_images");
      c.second_test_labels = kv.require_string("combined.second_test_labels");
      c.combined_downsample = kv.get_u64("combined.downsample", 1);
    } else {
      throw ConfigError("dataset.kind must be idx, csv, synthetic, or combined");
    }

    for (const std::string& path :
         {c.train_images, c.train_labels, c.test_images, c.test_labels, c.csv_path,
          c.first_train_images, c.first_train_labels, c.first_test_images, c.first_test_labels,
          c.second_train_images, c.second_train_labels, c.second_test_images,
          c.second_test_labels}) {
      if (!path.empty() && !std::filesystem::exists(path)) {
        throw ConfigError("referenced file does not exist: " + path);
      }
    }

    c.student_split = kv.get_u64("student.split", 0);
    c.teacher_hidden = kv.get_size_list("teacher.hidden", {500, 500});
    if (kv.has("student.hidden") && kv.has("student.budget")) {
      throw ConfigError("student.hidden and student.budget are mutually exclusive");
    }
    if (kv.has("student.budget")) {
      c.student_budget = kv.get_u64("student.budget", 0);
      c.student_hidden.clear();
    } else {
      c.student_hidden = kv.get_size_list("student.hidden", {20, 20});
    }
    c.m = kv.get_u64("m", 4);
    if (c.m == 0) throw ConfigError("m must be positive");
    c.uniform_prior = kv.get_bool("typem.uniform_prior", false);

    const std::string source = kv.get_string("superfeature.source", "algorithm");
    if (source == "algorithm") {
      c.superfeature_source = SuperfeatureSource::algorithm;
    } else if (source == "actual") {
      c.superfeature_source = SuperfeatureSource::actual;
    } else if (source == "random") {
      c.superfeature_source = SuperfeatureSource::random;
    } else if (source == "file") {
      c.superfeature_source = SuperfeatureSource::file;
      c.superfeature_file = kv.require_string("superfeature.file");
      if (!std::filesystem::exists(c.superfeature_file)) {
        throw ConfigError("referenced file does not exist: " + c.superfeature_file);
      }
    } else {
      throw ConfigError("superfeature.source must be algorithm, actual, random, or file");
    }
    c.hessian_samples = kv.get_u64("hessian.samples", 1000);
    c.hessian_fd_step = kv.get_double("hessian.fd_step", 1e-3);
    c.resolution_step = kv.get_double("resolution.step", 0.01);
    c.resolution_max = kv.get_double("resolution.max", 10.0);

    c.distill.temperature = kv.get_double("distill.temperature", 10.0);
    c.distill.tau = kv.get_double("distill.tau", 10.0);
    c.distill.lambda = kv.get_double("distill.lambda", 0.7);
    c.distill.mu = kv.get_double("distill.mu", 0.7);
    c.distill.rho = kv.get_double("distill.rho", 0.7);
    try {
      c.distill.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    c.variants = kv.get_string_list("distill.variants", {"nodistill", "kd", "ked"});
    for (const std::string& v : c.variants) {
      if (v != "nodistill" && v != "kd" && v != "ked" && v != "ked_hidden") {
        throw ConfigError("distill.variants: unknown variant '" + v + "'");
      }
    }

    c.teacher_epochs = kv.get_u64("train.teacher_epochs", 100);
    c.teacher_batch = kv.get_u64("train.teacher_batch", 500);
    c.student_epochs = kv.get_u64("train.student_epochs", 100);
    c.student_batch = kv.get_u64("train.student_batch", 100);
    c.learning_rate = kv.get_double("train.learning_rate", 0.001);
    const std::string opt = kv.get_string("train.optimizer", "adam");
    if (opt == "adam") {
      c.optimizer = OptimizerKind::adam;
    } else if (opt == "sgd") {
      c.optimizer = OptimizerKind::sgd_momentum;
    } else {
      throw ConfigError("train.optimizer must be adam or sgd");
    }
    c.momentum = kv.get_double("train.momentum", 0.9);
    c.validation_fraction = kv.get_double("train.validation_fraction", 0.1);
    if (c.validation_fraction < 0.0 || c.validation_fraction >= 1.0) {
      throw ConfigError("train.validation_fraction must lie in [0,1)");
    }

    c.chimeric_enabled = kv.get_bool("chimeric.enabled", false);
    c.chimeric_samples = kv.get_u64("chimeric.samples_per_epoch", 1000000);
    c.chimeric_epochs = kv.get_u64("chimeric.epochs", 5);
    c.chimeric_batch = kv.get_u64("chimeric.batch", 100);

    c.eval_replicates = kv.get_u64("eval.replicates", 2000);
    if (c.eval_replicates < 1000) throw ConfigError("eval.replicates must be at least 1000");
    c.out = kv.get_string("out", "runs/default");
    c.seed = kv.get_u64("seed", 1);
    c.config_hash = kv.content_hash();
    return c;
  }

  TrainingSchedule teacher_schedule(const std::string& stage) const {
    TrainingSchedule s;
    s.epochs = teacher_epochs;
    s.batch_size = teacher_batch;
    s.learning_rate = learning_rate;
    s.optimizer = optimizer;
    s.momentum = momentum;
    s.seed = derive_seed(seed, stage);
    s.validation_fraction = validation_fraction;
    return s;
  }

  TrainingSchedule student_schedule(const std::string& stage) const {
    TrainingSchedule s;
    s.epochs = student_epochs;
    s.batch_size = student_batch;
    s.learning_rate = learning_rate;
    s.optimizer = optimizer;
    s.momentum = momentum;
    s.seed = derive_seed(seed, stage);
    s.validation_fraction = validation_fraction;
    return s;
  }
};

}  // namespace ked
