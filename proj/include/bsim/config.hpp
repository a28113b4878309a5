#pragma once

// Declarative experiment description and its JSON encoding. Every field has
// a default, so an empty document describes the standard offline recipe.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsim/env.hpp"
#include "bsim/nncore.hpp"
#include "bsim/policy.hpp"
#include "bsim/posterior.hpp"

namespace bsim {

enum class BufferMode { window, cumulative };
enum class UserOrder { round_robin_shuffled, uniform_random };

struct LoopConfig {
  std::size_t bootstrap_users = 20;   // random-slate visits before the first model
  std::size_t retrain_every = 20;     // visits between retrains
  std::size_t slate_size = 7;
  std::size_t epochs = 100;           // per retrain
  std::size_t batch_size = 64;
  BufferMode buffer_mode = BufferMode::window;
  UserOrder user_order = UserOrder::round_robin_shuffled;
  std::size_t total_visits = 600;
};

struct WarmStartConfig {
  bool enabled = false;
  std::size_t collect_users = 120;  // visits of the greedy collection run
  std::size_t epochs = 500;
};

struct CatalogPaths {
  std::filesystem::path users;
  std::filesystem::path ads;
  std::filesystem::path labels;
};

struct EnvironmentConfig {
  std::optional<CatalogPaths> catalog;  // CSV catalog; synthetic when absent
  SynthSpec synth;                      // synth.seed also keys the holdout split
  std::size_t holdout_per_user = 5;
  int rating_threshold = 4;
  bool exclude_shown = true;
  LabelMode label_mode = LabelMode::frozen;
};

struct ExperimentConfig {
  std::string name;  // optional display label
  std::uint64_t seed = 0;
  std::string output_dir;
  EnvironmentConfig environment;
  SamplerRecipe sampler;
  PolicyConfig policy;
  LoopConfig loop;
  OptimizerConfig optimizer;
  WarmStartConfig warm_start;
};

/// Every violated invariant, in document order. Empty when valid.
std::vector<std::string> validation_errors(const ExperimentConfig& config);

/// Throws ConfigError listing every violated invariant.
void validate(const ExperimentConfig& config);

nlohmann::ordered_json to_json(const ExperimentConfig& config);

/// Missing keys take defaults; unknown keys, wrong types and invalid values
/// are collected and reported together in one ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies `value` at a dotted key path such as "policy.kind"; the key must
/// exist in the full (defaulted) document.
void apply_override(nlohmann::json& doc, const std::string& dotted_key, const nlohmann::json& value);

/// Row label in the style of the offline comparison table, e.g. "Bootstrap UCB".
std::string model_label(const ExperimentConfig& config);

/// One row of a sweep: a label and a JSON merge patch over the base config.
struct SweepCell {
  std::string label;
  nlohmann::json patch;
};

/// The twelve rows of the offline policy/sampler comparison.
std::vector<SweepCell> table1_cells();
/// Warm-started rows: epsilon-greedy at 100 epochs and the hybrid at 100, 200, 500.
std::vector<SweepCell> table2_cells();

ExperimentConfig apply_patch(const ExperimentConfig& base, const nlohmann::json& patch);

/// Config of run (cell, seed value) in a sweep with master seed `master`: the
/// environment seed depends on the seed value only, the run seed on both.
ExperimentConfig sweep_run_config(const ExperimentConfig& cell_config, std::uint64_t master, std::size_t cell,
                                  std::uint64_t seed_value);

std::string to_string(BufferMode mode);
std::string to_string(UserOrder order);

}  // namespace bsim
