#include "bsim/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bsim/error.hpp"
#include "bsim/rng.hpp"

namespace bsim {

namespace {

// y += a * x. A plain loop so every call site rounds identically.
inline void axpy(double a, const double* x, double* y, Eigen::Index n) noexcept {
  for (Eigen::Index i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Binary cross-entropy on a logit, stable for large |z|.
inline double bce_logit(double z, double y) noexcept {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

void relu_inplace(Eigen::MatrixXd& m) { m = m.cwiseMax(0.0); }

Eigen::MatrixXd dense(const DenseLayer& layer, const Eigen::MatrixXd& a) {
  Eigen::MatrixXd z = layer.weights * a;
  z.colwise() += layer.bias;
  return z;
}

// Scaled keep-mask (0 or 1/(1-p)) for `units` rows, one stream per column.
Eigen::MatrixXd draw_masks(Eigen::Index units, std::span<SplitMix64> streams, double rate) {
  const double keep_scale = 1.0 / (1.0 - rate);
  Eigen::MatrixXd mask(units, static_cast<Eigen::Index>(streams.size()));
  for (std::size_t c = 0; c < streams.size(); ++c) {
    auto col = mask.col(static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < units; ++i) col(i) = streams[c].uniform() >= rate ? keep_scale : 0.0;
  }
  return mask;
}

void check_input(const NetworkParams& params, FeatureView input) {
  if (input.size() != params.config.input_dim) {
    std::ostringstream os;
    os << "input has " << input.size() << " features, network expects " << params.config.input_dim;
    throw ShapeError(os.str());
  }
  auto finite = [](std::span<const double> s) {
    return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(input.lead) || !finite(input.trail)) throw InputError("input contains non-finite values");
}

std::vector<double> flatten_layers(std::span<const DenseLayer> layers) {
  std::vector<double> out;
  for (const auto& l : layers) {
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) out.push_back(l.weights(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias(i));
  }
  return out;
}

std::vector<DenseLayer> zeros_like(const NetworkParams& p) {
  std::vector<DenseLayer> out;
  out.reserve(p.hidden.size() + 1);
  for (const auto& l : p.hidden)
    out.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()),
                   Eigen::VectorXd::Zero(l.bias.size())});
  out.push_back({Eigen::MatrixXd::Zero(p.head.weights.rows(), p.head.weights.cols()),
                 Eigen::VectorXd::Zero(p.head.bias.size())});
  return out;
}

struct TrainCache {
  std::vector<FeatureView> inputs;
  std::vector<Eigen::MatrixXd> pre;   // pre-activation per hidden layer
  std::vector<Eigen::MatrixXd> post;  // activation after dropout
  std::vector<Eigen::MatrixXd> mask;  // empty when the layer has no dropout
  Eigen::MatrixXd logits;
  Eigen::MatrixXd pair_mask;  // head_count x n, 1 where (example, head) contributes
  Eigen::VectorXd labels;
  double pairs = 0.0;
  double loss = 0.0;
};

void forward_train(const NetworkParams& params, std::span<const Example> batch,
                   std::span<const HeadMask> head_masks, std::uint64_t mask_seed, TrainCache& cache) {
  const auto& cfg = params.config;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto heads = static_cast<Eigen::Index>(cfg.head_count);
  if (batch.empty()) throw UsageError("training batch is empty");
  if (!head_masks.empty() && head_masks.size() != batch.size())
    throw ShapeError("head mask count differs from batch size");

  cache.inputs.clear();
  cache.labels.resize(n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& ex = batch[static_cast<std::size_t>(c)];
    check_input(params, ex.features);
    if (ex.label != 0.0 && ex.label != 1.0) throw InputError("labels must be 0 or 1");
    cache.inputs.push_back(ex.features);
    cache.labels(c) = ex.label;
  }

  const std::size_t depth = params.hidden.size();
  std::vector<SplitMix64> streams;
  if (cfg.first_dropout_layer()) {
    streams.reserve(batch.size());
    for (std::size_t c = 0; c < batch.size(); ++c) streams.emplace_back(derive_seed(mask_seed, c));
  }

  cache.pre.assign(depth, {});
  cache.post.assign(depth, {});
  cache.mask.assign(depth, {});
  for (std::size_t k = 0; k < depth; ++k) {
    cache.pre[k] = k == 0 ? input_layer(params.hidden[0], cache.inputs)
                          : dense(params.hidden[k], cache.post[k - 1]);
    cache.post[k] = cache.pre[k].cwiseMax(0.0);
    if (cfg.has_dropout(k)) {
      cache.mask[k] = draw_masks(cache.post[k].rows(), streams, cfg.dropout_rate);
      cache.post[k].array() *= cache.mask[k].array();
    }
  }
  cache.logits = depth == 0 ? input_layer(params.head, cache.inputs) : dense(params.head, cache.post.back());

  cache.pair_mask.setOnes(heads, n);
  if (!head_masks.empty()) {
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& hm = head_masks[static_cast<std::size_t>(c)];
      if (hm.size() != cfg.head_count) throw ShapeError("head mask width differs from head count");
      for (Eigen::Index h = 0; h < heads; ++h) cache.pair_mask(h, c) = hm[static_cast<std::size_t>(h)] ? 1.0 : 0.0;
    }
  }
  cache.pairs = cache.pair_mask.sum();
  if (cache.pairs == 0.0) throw UsageError("no (example, head) pair is assigned in this batch");

  double total = 0.0;
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index h = 0; h < heads; ++h)
      if (cache.pair_mask(h, c) != 0.0) total += bce_logit(cache.logits(h, c), cache.labels(c));
  cache.loss = total / cache.pairs;
}

}  // namespace

FeatureVector FeatureView::materialize() const {
  FeatureVector out(lead.begin(), lead.end());
  out.insert(out.end(), trail.begin(), trail.end());
  return out;
}

ContextBatch ContextBatch::from_vectors(std::span<const FeatureVector> contexts) {
  ContextBatch batch;
  batch.rows.reserve(contexts.size());
  for (const auto& c : contexts) batch.rows.emplace_back(c);
  return batch;
}

// ---------------------------------------------------------------------------

void NetworkConfig::validate() const {
  if (input_dim == 0) throw ConfigError("network input_dim must be positive");
  for (std::size_t k = 0; k < layer_sizes.size(); ++k)
    if (layer_sizes[k] == 0) throw ConfigError("hidden layer " + std::to_string(k) + " has zero units");
  if (head_count == 0) throw ConfigError("network head_count must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  if (dropout_placement == DropoutPlacement::second_to_last && layer_sizes.empty())
    throw ConfigError("second_to_last dropout needs at least one hidden layer");
}

bool NetworkConfig::has_dropout(std::size_t k) const noexcept {
  if (dropout_rate <= 0.0 || k >= layer_sizes.size()) return false;
  switch (dropout_placement) {
    case DropoutPlacement::none: return false;
    case DropoutPlacement::all_hidden: return true;
    case DropoutPlacement::second_to_last: return k + 1 == layer_sizes.size();
  }
  return false;
}

std::optional<std::size_t> NetworkConfig::first_dropout_layer() const noexcept {
  for (std::size_t k = 0; k < layer_sizes.size(); ++k)
    if (has_dropout(k)) return k;
  return std::nullopt;
}

std::size_t NetworkParams::parameter_count() const noexcept {
  std::size_t n = static_cast<std::size_t>(head.weights.size() + head.bias.size());
  for (const auto& l : hidden) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

std::vector<double> NetworkParams::flatten() const {
  std::vector<DenseLayer> all(hidden);
  all.push_back(head);
  return flatten_layers(all);
}

void NetworkParams::assign_flat(std::span<const double> values) {
  if (values.size() != parameter_count())
    throw ShapeError("flat parameter block has " + std::to_string(values.size()) + " values, expected " +
                     std::to_string(parameter_count()));
  std::size_t pos = 0;
  auto fill = [&](DenseLayer& l) {
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) l.weights(i, j) = values[pos++];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = values[pos++];
  };
  for (auto& l : hidden) fill(l);
  fill(head);
}

bool NetworkParams::all_finite() const noexcept {
  auto ok = [](const DenseLayer& l) { return l.weights.allFinite() && l.bias.allFinite(); };
  return ok(head) && std::all_of(hidden.begin(), hidden.end(), ok);
}

void NetworkParams::check_shapes() const {
  config.validate();
  if (hidden.size() != config.layer_sizes.size()) throw ShapeError("hidden layer count differs from config");
  std::size_t prev = config.input_dim;
  auto expect = [&](const DenseLayer& l, std::size_t rows, std::size_t cols, const char* what) {
    if (l.fan_out() != rows || l.fan_in() != cols || static_cast<std::size_t>(l.bias.size()) != rows)
      throw ShapeError(std::string(what) + " shape disagrees with config");
  };
  for (std::size_t k = 0; k < hidden.size(); ++k) {
    expect(hidden[k], config.layer_sizes[k], prev, "hidden layer");
    prev = config.layer_sizes[k];
  }
  expect(head, config.head_count, prev, "head layer");
}

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  if (fan_in + fan_out == 0) throw ConfigError("glorot bound needs a nonzero fan");
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkParams p;
  p.config = config;
  std::mt19937_64 rng(derive_seed(seed, Stream::init));
  auto make = [&](std::size_t out, std::size_t in) {
    DenseLayer l{Eigen::MatrixXd(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                 Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
    std::uniform_real_distribution<double> u(-glorot_bound(in, out), glorot_bound(in, out));
    for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weights.cols(); ++j) l.weights(i, j) = u(rng);
    return l;
  };
  std::size_t prev = config.input_dim;
  for (auto width : config.layer_sizes) {
    p.hidden.push_back(make(width, prev));
    prev = width;
  }
  p.head = make(config.head_count, prev);
  return p;
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd input_layer(const DenseLayer& layer, const ContextBatch& batch, std::size_t begin,
                            std::size_t end) {
  const Eigen::Index out = layer.weights.rows();
  const double* w = layer.weights.data();
  const auto shared = static_cast<Eigen::Index>(batch.shared.size());

  Eigen::VectorXd base = layer.bias;
  for (Eigen::Index j = 0; j < shared; ++j) {
    const double v = batch.shared[static_cast<std::size_t>(j)];
    if (v != 0.0) axpy(v, w + j * out, base.data(), out);
  }
  Eigen::MatrixXd z(out, static_cast<Eigen::Index>(end - begin));
  for (std::size_t c = begin; c < end; ++c) {
    const auto row = batch.rows[c];
    if (static_cast<Eigen::Index>(row.size()) + shared != layer.weights.cols())
      throw ShapeError("context width differs from the input layer");
    double* col = z.col(static_cast<Eigen::Index>(c - begin)).data();
    std::copy(base.data(), base.data() + out, col);
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j] != 0.0) axpy(row[j], w + (shared + static_cast<Eigen::Index>(j)) * out, col, out);
  }
  return z;
}

Eigen::MatrixXd input_layer(const DenseLayer& layer, std::span<const FeatureView> inputs) {
  const Eigen::Index out = layer.weights.rows();
  const double* w = layer.weights.data();
  Eigen::MatrixXd z(out, static_cast<Eigen::Index>(inputs.size()));
  Eigen::VectorXd base(out);
  for (std::size_t c = 0; c < inputs.size(); ++c) {
    const auto& in = inputs[c];
    if (static_cast<Eigen::Index>(in.size()) != layer.weights.cols())
      throw ShapeError("context width differs from the input layer");
    base = layer.bias;
    for (std::size_t j = 0; j < in.lead.size(); ++j)
      if (in.lead[j] != 0.0) axpy(in.lead[j], w + static_cast<Eigen::Index>(j) * out, base.data(), out);
    double* col = z.col(static_cast<Eigen::Index>(c)).data();
    std::copy(base.data(), base.data() + out, col);
    const auto lead = static_cast<Eigen::Index>(in.lead.size());
    for (std::size_t j = 0; j < in.trail.size(); ++j)
      if (in.trail[j] != 0.0) axpy(in.trail[j], w + (lead + static_cast<Eigen::Index>(j)) * out, col, out);
  }
  return z;
}

Trunk trunk_forward(const NetworkParams& params, const ContextBatch& batch, std::size_t begin,
                    std::size_t end) {
  const auto& cfg = params.config;
  if (params.hidden.empty()) return {input_layer(params.head, batch, begin, end), true};

  Eigen::MatrixXd a = input_layer(params.hidden[0], batch, begin, end);
  relu_inplace(a);
  const auto first = cfg.first_dropout_layer();
  const std::size_t stop = first ? *first : params.hidden.size() - 1;
  for (std::size_t k = 1; k <= stop; ++k) {
    a = dense(params.hidden[k], a);
    relu_inplace(a);
  }
  if (!first) return {dense(params.head, a), true};
  return {std::move(a), false};
}

Eigen::MatrixXd tail_logits(const NetworkParams& params, const Trunk& trunk,
                            std::span<const std::uint64_t> mask_seeds) {
  if (trunk.complete) return trunk.values;
  const auto& cfg = params.config;
  const std::size_t first = *cfg.first_dropout_layer();
  if (!mask_seeds.empty() && mask_seeds.size() != static_cast<std::size_t>(trunk.values.cols()))
    throw ShapeError("one mask seed per trunk column is required");

  std::vector<SplitMix64> streams(mask_seeds.begin(), mask_seeds.end());
  Eigen::MatrixXd a = trunk.values;
  for (std::size_t k = first; k < params.hidden.size(); ++k) {
    if (k > first) {
      a = dense(params.hidden[k], a);
      relu_inplace(a);
    }
    if (!streams.empty() && cfg.has_dropout(k))
      a.array() *= draw_masks(a.rows(), streams, cfg.dropout_rate).array();
  }
  return dense(params.head, a);
}

namespace {

Eigen::VectorXd single_logits(const NetworkParams& params, FeatureView input, const PassMode& mode,
                              std::optional<std::size_t> head) {
  check_input(params, input);
  if (head && *head >= params.config.head_count)
    throw UsageError("head index " + std::to_string(*head) + " out of range");
  ContextBatch batch;
  batch.shared = input.lead;
  batch.rows.push_back(input.trail);
  const Trunk trunk = trunk_forward(params, batch, 0, 1);
  std::uint64_t seed = 0;
  std::span<const std::uint64_t> seeds;
  if (const auto* mc = std::get_if<McSample>(&mode)) {
    seed = mc->mask_seed;
    seeds = {&seed, 1};
  }
  return tail_logits(params, trunk, seeds).col(0);
}

}  // namespace

double forward_logit(const NetworkParams& params, FeatureView input, PassMode mode,
                     std::optional<std::size_t> head) {
  const Eigen::VectorXd z = single_logits(params, input, mode, head);
  return head ? z(static_cast<Eigen::Index>(*head)) : z.mean();
}

double forward(const NetworkParams& params, FeatureView input, PassMode mode, std::optional<std::size_t> head) {
  const Eigen::VectorXd z = single_logits(params, input, mode, head);
  if (head) return sigmoid(z(static_cast<Eigen::Index>(*head)));
  double sum = 0.0;
  for (Eigen::Index h = 0; h < z.size(); ++h) sum += sigmoid(z(h));
  return sum / static_cast<double>(z.size());
}

// ---------------------------------------------------------------------------

DecayReading OptimizerConfig::effective_reading() const noexcept {
  if (decay_reading) return *decay_reading;
  return kind == OptimizerKind::rmsprop ? DecayReading::moving_average : DecayReading::lr_schedule;
}

double OptimizerConfig::rms_coefficient() const noexcept {
  return effective_reading() == DecayReading::moving_average ? decay : 0.9;
}

double OptimizerConfig::learning_rate_at(std::uint64_t step) const noexcept {
  if (effective_reading() == DecayReading::lr_schedule)
    return learning_rate / (1.0 + decay * static_cast<double>(step));
  return learning_rate;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("optimizer learning_rate must be finite and nonnegative");
  if (!(decay >= 0.0) || !std::isfinite(decay)) throw ConfigError("optimizer decay must be finite and nonnegative");
  if (kind == OptimizerKind::rmsprop && effective_reading() == DecayReading::moving_average && decay >= 1.0)
    throw ConfigError("rmsprop moving-average decay must be below 1");
  if (!(epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
}

OptimizerState make_optimizer(const OptimizerConfig& config, const NetworkParams& params) {
  config.validate();
  OptimizerState s{config, {}};
  if (config.kind == OptimizerKind::rmsprop) s.rms_avg = zeros_like(params);
  return s;
}

std::vector<double> Gradients::flatten() const { return flatten_layers(layers); }

Gradients compute_gradients(const NetworkParams& params, std::span<const Example> batch,
                            std::span<const HeadMask> head_masks, std::uint64_t mask_seed) {
  TrainCache cache;
  forward_train(params, batch, head_masks, mask_seed, cache);

  const std::size_t depth = params.hidden.size();
  const auto n = static_cast<Eigen::Index>(batch.size());
  Gradients g{cache.loss, zeros_like(params)};

  // dL/dlogit for every assigned (example, head) pair.
  Eigen::MatrixXd delta(cache.logits.rows(), n);
  for (Eigen::Index c = 0; c < n; ++c)
    for (Eigen::Index h = 0; h < delta.rows(); ++h)
      delta(h, c) = cache.pair_mask(h, c) * (sigmoid(cache.logits(h, c)) - cache.labels(c)) / cache.pairs;

  auto input_grad = [&](DenseLayer& out, const Eigen::MatrixXd& d) {
    const Eigen::Index rows = out.weights.rows();
    double* w = out.weights.data();
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& in = cache.inputs[static_cast<std::size_t>(c)];
      const double* dc = d.col(c).data();
      for (std::size_t j = 0; j < in.size(); ++j) {
        const double v = in[j];
        if (v != 0.0) axpy(v, dc, w + static_cast<Eigen::Index>(j) * rows, rows);
      }
    }
    out.bias = d.rowwise().sum();
  };

  DenseLayer& head_grad = g.layers.back();
  if (depth == 0) {
    input_grad(head_grad, delta);
    return g;
  }
  head_grad.weights.noalias() = delta * cache.post.back().transpose();
  head_grad.bias = delta.rowwise().sum();

  Eigen::MatrixXd upstream = params.head.weights.transpose() * delta;
  for (std::size_t k = depth; k-- > 0;) {
    Eigen::MatrixXd dz = upstream;
    if (cache.mask[k].size() != 0) dz.array() *= cache.mask[k].array();
    dz.array() *= (cache.pre[k].array() > 0.0).cast<double>();
    if (k == 0) {
      input_grad(g.layers[0], dz);
    } else {
      g.layers[k].weights.noalias() = dz * cache.post[k - 1].transpose();
      g.layers[k].bias = dz.rowwise().sum();
      upstream = params.hidden[k].weights.transpose() * dz;
    }
  }
  return g;
}

double batch_loss(const NetworkParams& params, std::span<const Example> batch,
                  std::span<const HeadMask> head_masks, std::uint64_t mask_seed) {
  TrainCache cache;
  forward_train(params, batch, head_masks, mask_seed, cache);
  return cache.loss;
}

void apply_update(NetworkParams& params, OptimizerState& optimizer, const Gradients& grads) {
  const auto& cfg = optimizer.config;
  const double lr = cfg.learning_rate_at(params.step_count);
  const std::size_t depth = params.hidden.size();
  if (grads.layers.size() != depth + 1) throw ShapeError("gradient layout differs from the network");

  auto layer = [&](std::size_t k) -> DenseLayer& { return k < depth ? params.hidden[k] : params.head; };
  if (cfg.kind == OptimizerKind::sgd) {
    for (std::size_t k = 0; k <= depth; ++k) {
      layer(k).weights.noalias() -= lr * grads.layers[k].weights;
      layer(k).bias.noalias() -= lr * grads.layers[k].bias;
    }
  } else {
    if (optimizer.rms_avg.size() != depth + 1) throw ShapeError("optimizer state layout differs from the network");
    const double rho = cfg.rms_coefficient();
    const double eps = cfg.epsilon;
    auto step = [&](auto& param, auto& avg, const auto& grad) {
      avg.array() = rho * avg.array() + (1.0 - rho) * grad.array().square();
      param.array() -= lr * grad.array() / (avg.array().sqrt() + eps);
    };
    for (std::size_t k = 0; k <= depth; ++k) {
      step(layer(k).weights, optimizer.rms_avg[k].weights, grads.layers[k].weights);
      step(layer(k).bias, optimizer.rms_avg[k].bias, grads.layers[k].bias);
    }
  }
  ++params.step_count;
}

double train_step(NetworkParams& params, OptimizerState& optimizer, std::span<const Example> batch,
                  std::span<const HeadMask> head_masks, std::uint64_t mask_seed) {
  const Gradients g = compute_gradients(params, batch, head_masks, mask_seed);
  if (!std::isfinite(g.loss)) {
    std::ostringstream os;
    os << "non-finite training loss " << g.loss << " at step " << params.step_count << " (batch of "
       << batch.size() << ", parameters finite: " << (params.all_finite() ? "yes" : "no") << ")";
    throw NumericError(os.str());
  }
  apply_update(params, optimizer, g);
  return g.loss;
}

}  // namespace bsim
