#pragma once

// Evaluation metrics for CTR models and bandit runs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsim/impression.hpp"

namespace bsim {

struct Catalog;

/// 100 * (model_ctr / random_ctr - 1). Throws UndefinedMetric when random_ctr is 0.
double ctr_uplift(double model_ctr, double random_ctr);

/// Step-wise area under the precision-recall curve (average precision).
/// Equal scores form one threshold. Throws UndefinedMetric without positives.
double pr_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mann-Whitney ROC-AUC with ties counted as one half. Throws UndefinedMetric
/// unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Mean binary cross-entropy, scores clipped to [1e-15, 1 - 1e-15].
double log_loss(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Percent cross-entropy improvement over the constant predictor at the
/// labels' own positive rate. Throws UndefinedMetric when all labels agree.
double rce(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RegretSeries {
  std::vector<double> per_round;
  std::vector<double> cumulative;
};

/// Per-round regret of the logged slates against `oracle_slates` (one per
/// round, in order of first appearance in the log). Needs ground-truth CTRs.
RegretSeries regret(std::span<const Impression> log, const Catalog& catalog,
                    std::span<const std::vector<std::size_t>> oracle_slates);

/// Running clicks / impressions after each round of the log.
std::vector<double> cumulative_ctr_series(std::span<const Impression> log);

struct MetricsReport {
  std::string model;         // Table-1 style label
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string run_id;

  std::uint64_t visits = 0;  // user visits served
  std::uint64_t impressions = 0;
  std::uint64_t clicks = 0;
  std::uint64_t retrains = 0;
  bool stopped_early = false;
  std::string stop_reason;

  double cumulative_ctr = 0.0;
  double random_ctr = 0.0;
  double ctr_uplift_pct = 0.0;
  std::optional<double> train_pr_auc;  // over the logged impressions
  std::optional<double> test_pr_auc;   // over the holdout cells
  std::optional<double> roc_auc;
  std::optional<double> rce_pct;
  std::optional<double> log_loss;
  std::optional<double> warm_start_train_pr_auc;

  std::vector<double> ctr_series;
  std::vector<double> regret_series;  // cumulative; empty without ground truth
};

}  // namespace bsim
