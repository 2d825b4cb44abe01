// Test-set evaluation with percentile-bootstrap confidence intervals, plus
// the side-by-side comparison table for report files.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ked/dataset.hpp"
#include "ked/model.hpp"
#include "ked/serialize.hpp"
#include "ked/train.hpp"

namespace ked {

// Content fingerprint so reports can guarantee they refer to one test set.
inline std::string dataset_content_id(const Dataset& ds) {
  std::uint64_t h = io::fnv1a64(reinterpret_cast<const unsigned char*>(ds.features.data()),
                                ds.features.size() * sizeof(double));
  h = io::fnv1a64(reinterpret_cast<const unsigned char*>(ds.labels.data()),
                  ds.labels.size() * sizeof(int), h);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct EvaluationReport {
  std::string run_id;
  std::string test_set_id;
  double accuracy = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  std::size_t replicates = 0;
  std::vector<double> per_class_accuracy;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::size_t test_size = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"run_id", run_id},
            {"test_set_id", test_set_id},
            {"accuracy", accuracy},
            {"ci_lower", ci_lower},
            {"ci_upper", ci_upper},
            {"replicates", replicates},
            {"per_class_accuracy", per_class_accuracy},
            {"config_hash", config_hash},
            {"seed", seed},
            {"test_size", test_size},
            {"wall_seconds", wall_seconds}};
  }

  static EvaluationReport from_json(const nlohmann::json& j) {
    EvaluationReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.test_set_id = j.at("test_set_id").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.ci_lower = j.at("ci_lower").get<double>();
    r.ci_upper = j.at("ci_upper").get<double>();
    r.replicates = j.at("replicates").get<std::size_t>();
    r.per_class_accuracy = j.at("per_class_accuracy").get<std::vector<double>>();
    r.config_hash = j.at("config_hash").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.test_size = j.at("test_size").get<std::size_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    return r;
  }
};

// Point accuracy on the full test set plus a 95% percentile interval over
// seeded resamples (with replacement) of the test indices.
inline EvaluationReport evaluate_bootstrap(const TypeMModel& model, const Dataset& test,
                                           std::size_t replicates, std::uint64_t seed) {
  if (test.sample_count() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (replicates < 1000) {
    throw std::invalid_argument("evaluate: at least 1000 bootstrap replicates required");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t k = test.sample_count();
  const auto predicted = model.predict_classes(test.features, k);
  std::vector<unsigned char> correct(k);
  std::vector<std::size_t> class_total(test.class_count, 0), class_hits(test.class_count, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    correct[i] = predicted[i] == test.labels[i];
    hits += correct[i];
    const auto cls = static_cast<std::size_t>(test.labels[i]);
    ++class_total[cls];
    class_hits[cls] += correct[i];
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<double> replicate_acc(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    std::size_t sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += correct[pick(rng)];
    replicate_acc[r] = static_cast<double>(sum) / static_cast<double>(k);
  }
  std::sort(replicate_acc.begin(), replicate_acc.end());
  const auto lo_idx = static_cast<std::size_t>(std::floor(0.025 * static_cast<double>(replicates)));
  const auto hi_idx =
      static_cast<std::size_t>(std::ceil(0.975 * static_cast<double>(replicates))) - 1;

  EvaluationReport report;
  report.test_set_id = dataset_content_id(test);
  report.accuracy = static_cast<double>(hits) / static_cast<double>(k);
  report.ci_lower = replicate_acc[lo_idx];
  report.ci_upper = replicate_acc[hi_idx];
  report.replicates = replicates;
  report.seed = seed;
  report.test_size = k;
  report.per_class_accuracy.resize(test.class_count, 0.0);
  for (std::size_t c = 0; c < test.class_count; ++c) {
    report.per_class_accuracy[c] =
        class_total[c] ? static_cast<double>(class_hits[c]) / static_cast<double>(class_total[c])
                       : 0.0;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Aligned comparison of reports over one shared test set. The first report is
// the baseline; rows are flagged "distinct" when their interval does not
// overlap the baseline's, "indistinguishable" at zero difference.
inline std::string comparison_table(const std::vector<EvaluationReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare: no reports");
  for (const auto& r : reports) {
    if (r.test_set_id != reports.front().test_set_id) {
      throw std::invalid_argument("compare: reports '" + reports.front().run_id + "' and '" +
                                  r.run_id + "' use different test sets");
    }
  }
  std::size_t name_width = 4;
  for (const auto& r : reports) name_width = std::max(name_width, r.run_id.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_width) + 2) << "run"
     << std::right << std::setw(18) << "accuracy" << std::setw(22) << "95% interval"
     << std::setw(12) << "delta" << "  note\n";
  const auto& base = reports.front();
  for (const auto& r : reports) {
    const double half = (r.ci_upper - r.ci_lower) / 2.0;
    const double delta = r.accuracy - base.accuracy;
    std::ostringstream acc, ci;
    acc << std::fixed << std::setprecision(2) << 100.0 * r.accuracy << " +- "
        << std::setprecision(2) << 100.0 * half;
    ci << std::fixed << std::setprecision(2) << "[" << 100.0 * r.ci_lower << ", "
       << 100.0 * r.ci_upper << "]";
    std::string note;
    if (&r != &base) {
      const bool disjoint = r.ci_lower > base.ci_upper || r.ci_upper < base.ci_lower;
      if (delta == 0.0) {
        note = "indistinguishable";
      } else if (disjoint) {
        note = "distinct";
      } else {
        note = "overlaps baseline";
      }
    }
    std::ostringstream dstr;
    dstr << std::showpos << std::fixed << std::setprecision(2) << 100.0 * delta;
    os << std::left << std::setw(static_cast<int>(name_width) + 2) << r.run_id << std::right
       << std::setw(18) << acc.str() << std::setw(22) << ci.str() << std::setw(12) << dstr.str()
       << "  " << note << "\n";
  }
  return os.str();
}

}  // namespace ked
