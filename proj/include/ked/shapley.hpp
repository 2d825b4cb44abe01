// Coalition game over superfeatures: the value of a coalition is the sum of
// its per-group log-posteriors minus the (M-1)-scaled log prior. The Shapley
// value of group m collapses to its own log-posterior, which the brute-force
// enumeration here verifies independently.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ked {

inline double value_function(const std::vector<std::size_t>& coalition,
                             const std::vector<double>& explanation_logs, double log_prior) {
  const std::size_t m_count = explanation_logs.size();
  double v = -static_cast<double>(m_count - 1) * log_prior;
  std::vector<bool> seen(m_count, false);
  for (std::size_t m : coalition) {
    if (m >= m_count) throw std::invalid_argument("value_function: member index out of range");
    if (seen[m]) throw std::invalid_argument("value_function: duplicate coalition member");
    seen[m] = true;
    v += explanation_logs[m];
  }
  return v;
}

// Literal enumeration of Shapley values over all coalitions. Factorial in M,
// so capped at M <= 12.
inline std::vector<double> shapley_values_bruteforce(const std::vector<double>& explanation_logs,
                                                     double log_prior) {
  const std::size_t m_count = explanation_logs.size();
  if (m_count == 0) throw std::invalid_argument("shapley: need at least one player");
  if (m_count > 12) throw std::invalid_argument("shapley: brute force capped at M = 12");

  std::vector<double> factorial(m_count + 1, 1.0);
  for (std::size_t i = 1; i <= m_count; ++i) factorial[i] = factorial[i - 1] * i;

  std::vector<double> result(m_count, 0.0);
  for (std::size_t m = 0; m < m_count; ++m) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < m_count; ++j) {
      if (j != m) others.push_back(j);
    }
    const std::size_t subsets = std::size_t{1} << others.size();
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      std::vector<std::size_t> coalition;
      for (std::size_t b = 0; b < others.size(); ++b) {
        if (mask & (std::size_t{1} << b)) coalition.push_back(others[b]);
      }
      const double without = value_function(coalition, explanation_logs, log_prior);
      coalition.push_back(m);
      const double with = value_function(coalition, explanation_logs, log_prior);
      const std::size_t s = coalition.size() - 1;
      const double weight = factorial[s] * factorial[m_count - s - 1] / factorial[m_count];
      result[m] += weight * (with - without);
    }
  }
  return result;
}

}  // namespace ked
