#pragma once

// Minimal feed-forward CTR network: ReLU hidden layers, optional inverted
// dropout, one or more sigmoid heads, analytic gradients, RMSProp and SGD.

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "bsim/features.hpp"

namespace bsim {

enum class DropoutPlacement { none, all_hidden, second_to_last };
enum class Activation { relu };
enum class OutputKind { sigmoid };

struct NetworkConfig {
  std::size_t input_dim = 1;
  std::vector<std::size_t> layer_sizes;  // hidden widths, bottom first
  std::size_t head_count = 1;
  double dropout_rate = 0.0;
  DropoutPlacement dropout_placement = DropoutPlacement::none;
  Activation activation = Activation::relu;
  OutputKind output = OutputKind::sigmoid;

  /// Throws ConfigError on zero dimensions, rate outside [0,1), or
  /// second_to_last placement without hidden layers.
  void validate() const;

  /// True when the outputs of hidden layer `k` pass through dropout units.
  bool has_dropout(std::size_t k) const noexcept;

  /// Index of the lowest dropout layer, or nullopt if dropout is inactive.
  std::optional<std::size_t> first_dropout_layer() const noexcept;

  bool operator==(const NetworkConfig&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd bias;

  std::size_t fan_in() const noexcept { return static_cast<std::size_t>(weights.cols()); }
  std::size_t fan_out() const noexcept { return static_cast<std::size_t>(weights.rows()); }
};

struct NetworkParams {
  NetworkConfig config;
  std::vector<DenseLayer> hidden;
  DenseLayer head;  // head_count x last hidden width
  std::uint64_t step_count = 0;

  std::size_t parameter_count() const noexcept;

  /// Layer order, each layer's weights row-major (out x in) then its bias;
  /// the head comes last.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);

  bool all_finite() const noexcept;
  /// Throws ShapeError if layer shapes disagree with `config`.
  void check_shapes() const;
};

double glorot_bound(std::size_t fan_in, std::size_t fan_out);

/// Glorot-uniform weights, zero biases; deterministic in (config, seed).
NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed);

struct Deterministic {};
struct McSample {
  std::uint64_t mask_seed;
};
using PassMode = std::variant<Deterministic, McSample>;

/// CTR prediction for one context. Deterministic mode disables dropout; an
/// McSample draws one keep-mask per dropout unit from its seed. With no head
/// given the result is the mean over heads.
double forward(const NetworkParams& params, FeatureView input, PassMode mode = Deterministic{},
               std::optional<std::size_t> head = std::nullopt);

/// Pre-sigmoid output; with no head given, the mean of the head logits.
double forward_logit(const NetworkParams& params, FeatureView input,
                     PassMode mode = Deterministic{}, std::optional<std::size_t> head = std::nullopt);

// ---------------------------------------------------------------------------
// Batched building blocks. Columns are contexts.

/// Input layer (hidden layer 0, or the head for a network without hidden
/// layers) evaluated on contexts [begin, end). Zero features are skipped and
/// terms are accumulated in feature order, so splitting a context into
/// shared + row pieces gives bit-identical results.
Eigen::MatrixXd input_layer(const DenseLayer& layer, const ContextBatch& batch, std::size_t begin,
                            std::size_t end);
Eigen::MatrixXd input_layer(const DenseLayer& layer, std::span<const FeatureView> inputs);

/// Everything below the first dropout mask. When the network has no active
/// dropout the trunk is the whole network and `values` holds head logits.
struct Trunk {
  Eigen::MatrixXd values;
  bool complete = false;
};

Trunk trunk_forward(const NetworkParams& params, const ContextBatch& batch, std::size_t begin,
                    std::size_t end);

/// Head logits (head_count x columns) from trunk activations. `mask_seeds`
/// holds one seed per column for Monte-Carlo passes; empty means dropout off.
Eigen::MatrixXd tail_logits(const NetworkParams& params, const Trunk& trunk,
                            std::span<const std::uint64_t> mask_seeds);

// ---------------------------------------------------------------------------
// Training

struct Example {
  FeatureView features;
  double label = 0.0;  // 0 or 1
};

/// Per-example head assignment; entry h != 0 means head h sees the example.
using HeadMask = std::vector<std::uint8_t>;

enum class OptimizerKind { rmsprop, sgd };

/// How the scalar "decay" hyperparameter is applied.
enum class DecayReading {
  moving_average,  // RMSProp squared-gradient average coefficient
  lr_schedule,     // lr_t = lr0 / (1 + decay * t)
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::rmsprop;
  double learning_rate = 0.1;
  double decay = 0.5;
  double epsilon = 1e-8;
  std::optional<DecayReading> decay_reading;  // default depends on kind

  DecayReading effective_reading() const noexcept;
  /// RMSProp moving-average coefficient actually used.
  double rms_coefficient() const noexcept;
  double learning_rate_at(std::uint64_t step) const noexcept;
  void validate() const;

  bool operator==(const OptimizerConfig&) const = default;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<DenseLayer> rms_avg;  // same layout as hidden + head; empty for sgd
};

OptimizerState make_optimizer(const OptimizerConfig& config, const NetworkParams& params);

struct Gradients {
  double loss = 0.0;  // mean BCE over (example, assigned head) pairs
  std::vector<DenseLayer> layers;  // hidden layers then head

  std::vector<double> flatten() const;
};

/// Loss and analytic gradients. Dropout (when configured) uses masks seeded
/// per example from `mask_seed`, so equal seeds reproduce equal masks.
Gradients compute_gradients(const NetworkParams& params, std::span<const Example> batch,
                            std::span<const HeadMask> head_masks, std::uint64_t mask_seed);

/// The loss alone, with the same masks `compute_gradients` would use.
double batch_loss(const NetworkParams& params, std::span<const Example> batch,
                  std::span<const HeadMask> head_masks, std::uint64_t mask_seed);

/// One optimizer step on `batch`; returns the mean loss before the update.
/// Throws UsageError on an empty batch and NumericError on a non-finite loss.
double train_step(NetworkParams& params, OptimizerState& optimizer, std::span<const Example> batch,
                  std::span<const HeadMask> head_masks, std::uint64_t mask_seed);

void apply_update(NetworkParams& params, OptimizerState& optimizer, const Gradients& grads);

}  // namespace bsim
