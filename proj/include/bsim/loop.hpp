#pragma once

// Continuous self-training loop: random bootstrap visits, then serve, log
// and retrain on the data the model itself selected.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsim/config.hpp"
#include "bsim/env.hpp"
#include "bsim/impression.hpp"
#include "bsim/metrics.hpp"
#include "bsim/posterior.hpp"

namespace bsim {

/// Builds the (holdout-split) catalog an experiment runs against.
std::shared_ptr<const Catalog> build_catalog(const EnvironmentConfig& env);

/// Optional observers, called synchronously from the loop.
struct RunHooks {
  /// After each retrain; `retrain` counts from 1, `round` is the visits so far.
  std::function<void(std::uint64_t retrain, std::uint64_t round, const Sampler&)> on_retrain;
  /// New impressions since the previous flush, at every retrain boundary and at the end.
  std::function<void(std::span<const Impression>)> on_flush;
};

struct RunResult {
  MetricsReport report;
  std::vector<Impression> log;
  std::optional<Sampler> sampler;
  std::vector<std::vector<std::size_t>> oracle_slates;  // per round; empty without ground truth
};

/// Runs one experiment against `catalog`. All randomness derives from config.seed.
RunResult run_experiment(const ExperimentConfig& config, std::shared_ptr<const Catalog> catalog,
                         const RunHooks& hooks = {});
RunResult run_experiment(const ExperimentConfig& config, const RunHooks& hooks = {});

/// Impressions of a single-network greedy self-training run of `users` visits
/// with the same cadence as `config.loop`.
std::vector<Impression> collect_greedy_dataset(const ExperimentConfig& config,
                                               std::shared_ptr<const Catalog> catalog, std::size_t users,
                                               std::uint64_t seed);

/// Trains `sampler` for `epochs` on a fixed dataset; returns the training PR-AUC
/// of the resulting point predictions.
double warm_start_pretrain(Sampler& sampler, const Catalog& catalog, std::span<const Impression> dataset,
                           std::size_t epochs, std::size_t batch_size);

/// The run id stamped on impressions: a prefix of the config digest.
std::string run_id_for(const ExperimentConfig& config);

/// Point-prediction metrics of `sampler` on the catalog's holdout cells
/// (or on every cell when `all_cells` is set).
struct EvalMetrics {
  std::size_t cells = 0;
  std::optional<double> pr_auc;
  std::optional<double> roc_auc;
  std::optional<double> rce_pct;
  std::optional<double> log_loss;
};
EvalMetrics evaluate_sampler(const Sampler& sampler, const Catalog& catalog, bool all_cells);

}  // namespace bsim
