#pragma once

// Slow reference implementations used to check the metric code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>

namespace bsim::test {

/// Average precision by enumerating every distinct score as a threshold.
inline double pr_auc_oracle(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  double positives = 0.0;
  for (auto l : labels) positives += l;
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] < t) continue;
      if (labels[i]) tp += 1.0;
      else fp += 1.0;
    }
    const double recall = tp / positives;
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

/// All positive/negative pairs, ties worth one half.
inline double roc_auc_oracle(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace bsim::test
