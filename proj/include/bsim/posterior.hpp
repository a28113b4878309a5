#pragma once

// Posterior samplers over CTR networks: bootstrapped ensembles, multi-head
// networks, MC dropout, and the hybrid second-to-last dropout layer.

#include <atomic>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "bsim/features.hpp"
#include "bsim/kernels.hpp"
#include "bsim/nncore.hpp"

namespace bsim {

enum class SamplerKind { bootstrap, multihead, sgd_ensemble, multihead_sgd, mc_dropout, hybrid };
enum class DataScheme { bernoulli_mask, full_data };

std::string_view to_string(SamplerKind kind) noexcept;
SamplerKind sampler_kind_from_string(std::string_view name);

/// True for kinds whose samples come from distinct members or heads.
bool is_ensemble_kind(SamplerKind kind) noexcept;
/// True for kinds whose samples are dropout draws.
bool is_dropout_kind(SamplerKind kind) noexcept;

struct SamplerConfig {
  SamplerKind kind = SamplerKind::hybrid;
  std::size_t members = 10;  // networks or heads; the hybrid's is descriptive only
  DataScheme data_scheme = DataScheme::full_data;
  double p_keep = 0.5;  // bernoulli_mask inclusion probability
  NetworkConfig net;
  std::uint64_t seed = 0;
  bool shared_mask = false;  // one dropout mask per draw for all contexts

  /// Throws ConfigError listing the first violated invariant.
  void validate() const;
  bool operator==(const SamplerConfig&) const = default;
};

/// Convenience description of a standard sampler; expands into a full
/// SamplerConfig with the right network topology for the kind.
struct SamplerRecipe {
  SamplerKind kind = SamplerKind::hybrid;
  std::size_t members = 10;
  double p_keep = 0.5;
  std::vector<std::size_t> hidden{100, 50};
  std::size_t hybrid_units = 20;
  double dropout_rate = 0.5;
  bool shared_mask = false;
};

SamplerConfig make_sampler_config(const SamplerRecipe& recipe, std::size_t input_dim, std::uint64_t seed);

/// candidates x samples matrix of posterior CTR draws, row-major.
struct ScoreSamples {
  std::size_t candidates = 0;
  std::size_t samples = 0;
  std::vector<double> values;

  ScoreSamples() = default;
  ScoreSamples(std::size_t n, std::size_t s) : candidates(n), samples(s), values(n * s) {}

  double& operator()(std::size_t c, std::size_t s) { return values[c * samples + s]; }
  double operator()(std::size_t c, std::size_t s) const { return values[c * samples + s]; }
  std::span<const double> row(std::size_t c) const { return {values.data() + c * samples, samples}; }
  std::vector<double> column(std::size_t s) const;
};

using MemberMask = std::vector<std::uint8_t>;

struct TrainingExample {
  std::uint64_t id = 0;  // stable key for membership
  FeatureView features;
  double label = 0.0;
};

struct TrainSchedule {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
};

struct RetrainReport {
  std::vector<std::size_t> member_examples;  // examples seen per member (or head)
  std::size_t steps = 0;
  double mean_loss = 0.0;  // over all steps of this retrain
};

class Sampler {
 public:
  Sampler(SamplerConfig config, OptimizerConfig optimizer);
  /// Rebuild from stored networks (checkpoint load).
  Sampler(SamplerConfig config, OptimizerConfig optimizer, std::vector<NetworkParams> networks);

  Sampler(const Sampler& other);
  Sampler& operator=(const Sampler& other);
  Sampler(Sampler&&) noexcept;
  Sampler& operator=(Sampler&&) noexcept;
  ~Sampler();

  const SamplerConfig& config() const noexcept { return config_; }
  const OptimizerConfig& optimizer_config() const noexcept { return optimizer_; }
  std::span<const NetworkParams> networks() const noexcept { return networks_; }
  std::uint64_t retrain_count() const noexcept { return retrains_; }

  /// Which members (or heads) train on the example. Pure in (seed, example_id).
  MemberMask assign_membership(std::uint64_t example_id) const;

  /// Posterior CTR draws, |contexts| x samples. `draw_seed` keys every random
  /// choice made by the draw.
  ScoreSamples sample_scores(const ContextBatch& contexts, std::size_t samples, std::uint64_t draw_seed,
                             Execution exec = Execution::parallel) const;

  /// Dropout off for dropout kinds; arithmetic mean of members or heads otherwise.
  std::vector<double> point_predict(const ContextBatch& contexts, Execution exec = Execution::parallel) const;

  /// Warm-started fine-tuning on `data`.
  RetrainReport retrain(std::span<const TrainingExample> data, const TrainSchedule& schedule,
                        Execution exec = Execution::parallel);

  /// Shared-trunk evaluations performed by sample_scores since construction.
  std::uint64_t trunk_evaluations() const noexcept { return trunk_evaluations_.load(); }
  void reset_counters() noexcept { trunk_evaluations_ = 0; }

 private:
  void check_contexts(const ContextBatch& contexts) const;
  std::size_t sample_pool() const noexcept;

  SamplerConfig config_;
  OptimizerConfig optimizer_;
  std::vector<NetworkParams> networks_;
  std::vector<OptimizerState> states_;
  std::uint64_t retrains_ = 0;
  mutable std::atomic<std::uint64_t> trunk_evaluations_{0};
};

}  // namespace bsim
