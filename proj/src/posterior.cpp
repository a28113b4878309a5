#include "bsim/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "bsim/error.hpp"
#include "bsim/rng.hpp"

namespace bsim {

namespace {

constexpr double kProbFloor = 1e-15;

double clamp_prob(double p) noexcept { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

struct MemberTraining {
  std::size_t examples = 0;
  std::size_t steps = 0;
  double loss_sum = 0.0;
};

MemberTraining train_network(NetworkParams& net, OptimizerState& state, std::span<const Example> examples,
                             std::span<const HeadMask> head_masks, const TrainSchedule& schedule,
                             std::uint64_t order_seed, std::uint64_t mask_base) {
  MemberTraining out;
  out.examples = examples.size();
  if (examples.empty() || schedule.epochs == 0) return out;
  const std::size_t bs = std::max<std::size_t>(1, schedule.batch_size);

  std::vector<std::size_t> order(examples.size());
  std::vector<Example> batch;
  std::vector<HeadMask> batch_masks;
  batch.reserve(bs);
  for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(order_seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      batch.clear();
      batch_masks.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(examples[order[i]]);
        if (!head_masks.empty()) batch_masks.push_back(head_masks[order[i]]);
      }
      out.loss_sum += train_step(net, state, batch, batch_masks, derive_seed(mask_base, net.step_count));
      ++out.steps;
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(SamplerKind kind) noexcept {
  switch (kind) {
    case SamplerKind::bootstrap: return "bootstrap";
    case SamplerKind::multihead: return "multihead";
    case SamplerKind::sgd_ensemble: return "sgd_ensemble";
    case SamplerKind::multihead_sgd: return "multihead_sgd";
    case SamplerKind::mc_dropout: return "mc_dropout";
    case SamplerKind::hybrid: return "hybrid";
  }
  return "?";
}

SamplerKind sampler_kind_from_string(std::string_view name) {
  for (auto k : {SamplerKind::bootstrap, SamplerKind::multihead, SamplerKind::sgd_ensemble,
                 SamplerKind::multihead_sgd, SamplerKind::mc_dropout, SamplerKind::hybrid})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown sampler kind '" + std::string(name) + "'");
}

bool is_ensemble_kind(SamplerKind kind) noexcept { return !is_dropout_kind(kind); }

bool is_dropout_kind(SamplerKind kind) noexcept {
  return kind == SamplerKind::mc_dropout || kind == SamplerKind::hybrid;
}

namespace {

bool is_multihead(SamplerKind k) noexcept { return k == SamplerKind::multihead || k == SamplerKind::multihead_sgd; }
bool is_multi_network(SamplerKind k) noexcept {
  return k == SamplerKind::bootstrap || k == SamplerKind::sgd_ensemble;
}

}  // namespace

void SamplerConfig::validate() const {
  net.validate();
  const std::string kind_name(to_string(kind));
  auto fail = [&](const std::string& what) { throw ConfigError("sampler '" + kind_name + "': " + what); };
  if (members == 0) fail("members must be at least 1");
  if (!(p_keep > 0.0 && p_keep <= 1.0)) fail("p_keep must lie in (0, 1]");

  const bool wants_masks = kind == SamplerKind::bootstrap || kind == SamplerKind::multihead;
  if (wants_masks && data_scheme != DataScheme::bernoulli_mask) fail("requires the bernoulli_mask data scheme");
  if (!wants_masks && data_scheme != DataScheme::full_data) fail("requires the full_data data scheme");

  if (is_multihead(kind) && net.head_count != members) fail("head_count must equal members");
  if (!is_multihead(kind) && net.head_count != 1) fail("expects a single-head network");

  if (kind == SamplerKind::mc_dropout && net.dropout_placement != DropoutPlacement::all_hidden)
    fail("requires dropout on all hidden layers");
  if (kind == SamplerKind::mc_dropout && net.layer_sizes.empty()) fail("requires at least one hidden layer");
  if (kind == SamplerKind::hybrid) {
    if (net.dropout_placement != DropoutPlacement::second_to_last) fail("requires second_to_last dropout placement");
    if (!(net.dropout_rate > 0.0)) fail("requires a positive dropout rate");
  }
}

SamplerConfig make_sampler_config(const SamplerRecipe& recipe, std::size_t input_dim, std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.kind = recipe.kind;
  cfg.members = recipe.members;
  cfg.p_keep = recipe.p_keep;
  cfg.seed = seed;
  cfg.shared_mask = recipe.shared_mask;
  cfg.data_scheme = (recipe.kind == SamplerKind::bootstrap || recipe.kind == SamplerKind::multihead)
                        ? DataScheme::bernoulli_mask
                        : DataScheme::full_data;
  cfg.net.input_dim = input_dim;
  cfg.net.layer_sizes = recipe.hidden;
  cfg.net.head_count = is_multihead(recipe.kind) ? recipe.members : 1;
  switch (recipe.kind) {
    case SamplerKind::mc_dropout:
      cfg.net.dropout_placement = DropoutPlacement::all_hidden;
      cfg.net.dropout_rate = recipe.dropout_rate;
      break;
    case SamplerKind::hybrid:
      cfg.net.layer_sizes.push_back(recipe.hybrid_units);
      cfg.net.dropout_placement = DropoutPlacement::second_to_last;
      cfg.net.dropout_rate = recipe.dropout_rate;
      break;
    default:
      cfg.net.dropout_placement = DropoutPlacement::none;
      cfg.net.dropout_rate = 0.0;
  }
  return cfg;
}

std::vector<double> ScoreSamples::column(std::size_t s) const {
  std::vector<double> out(candidates);
  for (std::size_t c = 0; c < candidates; ++c) out[c] = (*this)(c, s);
  return out;
}

// ---------------------------------------------------------------------------

Sampler::Sampler(SamplerConfig config, OptimizerConfig optimizer)
    : config_(std::move(config)), optimizer_(optimizer) {
  config_.validate();
  optimizer_.validate();
  const std::size_t count = is_multi_network(config_.kind) ? config_.members : 1;
  for (std::size_t m = 0; m < count; ++m) {
    networks_.push_back(init_network(config_.net, derive_seed(config_.seed, Stream::sampler, m)));
    states_.push_back(make_optimizer(optimizer_, networks_.back()));
  }
}

Sampler::Sampler(SamplerConfig config, OptimizerConfig optimizer, std::vector<NetworkParams> networks)
    : config_(std::move(config)), optimizer_(optimizer), networks_(std::move(networks)) {
  config_.validate();
  optimizer_.validate();
  const std::size_t count = is_multi_network(config_.kind) ? config_.members : 1;
  if (networks_.size() != count)
    throw CompatibilityError("sampler expects " + std::to_string(count) + " networks, got " +
                             std::to_string(networks_.size()));
  for (const auto& n : networks_) {
    n.check_shapes();
    if (!(n.config == config_.net)) throw CompatibilityError("network config differs from sampler config");
    states_.push_back(make_optimizer(optimizer_, n));
  }
}

Sampler::Sampler(const Sampler& o)
    : config_(o.config_),
      optimizer_(o.optimizer_),
      networks_(o.networks_),
      states_(o.states_),
      retrains_(o.retrains_),
      trunk_evaluations_(o.trunk_evaluations_.load()) {}

Sampler& Sampler::operator=(const Sampler& o) {
  if (this != &o) {
    config_ = o.config_;
    optimizer_ = o.optimizer_;
    networks_ = o.networks_;
    states_ = o.states_;
    retrains_ = o.retrains_;
    trunk_evaluations_ = o.trunk_evaluations_.load();
  }
  return *this;
}

Sampler::Sampler(Sampler&& o) noexcept
    : config_(std::move(o.config_)),
      optimizer_(o.optimizer_),
      networks_(std::move(o.networks_)),
      states_(std::move(o.states_)),
      retrains_(o.retrains_),
      trunk_evaluations_(o.trunk_evaluations_.load()) {}

Sampler& Sampler::operator=(Sampler&& o) noexcept {
  config_ = std::move(o.config_);
  optimizer_ = o.optimizer_;
  networks_ = std::move(o.networks_);
  states_ = std::move(o.states_);
  retrains_ = o.retrains_;
  trunk_evaluations_ = o.trunk_evaluations_.load();
  return *this;
}

Sampler::~Sampler() = default;

MemberMask Sampler::assign_membership(std::uint64_t example_id) const {
  const std::size_t b = config_.members;
  if (config_.data_scheme == DataScheme::full_data) return MemberMask(b, 1);
  SplitMix64 rng(derive_seed(config_.seed, Stream::membership, example_id));
  MemberMask mask(b, 0);
  for (auto& m : mask) m = rng.uniform() < config_.p_keep ? 1 : 0;
  return mask;
}

std::size_t Sampler::sample_pool() const noexcept {
  return is_multi_network(config_.kind) ? networks_.size() : config_.net.head_count;
}

void Sampler::check_contexts(const ContextBatch& contexts) const {
  const std::size_t width = config_.net.input_dim;
  auto finite = [](std::span<const double> s) {
    return std::all_of(s.begin(), s.end(), [](double v) { return std::isfinite(v); });
  };
  if (!finite(contexts.shared)) throw InputError("shared context features contain non-finite values");
  for (const auto& row : contexts.rows) {
    if (contexts.shared.size() + row.size() != width)
      throw ShapeError("context has " + std::to_string(contexts.shared.size() + row.size()) +
                       " features, sampler expects " + std::to_string(width));
    if (!finite(row)) throw InputError("context features contain non-finite values");
  }
}

ScoreSamples Sampler::sample_scores(const ContextBatch& contexts, std::size_t samples, std::uint64_t draw_seed,
                                    Execution exec) const {
  if (samples == 0) throw UsageError("sample count must be at least 1");
  check_contexts(contexts);
  const std::size_t n = contexts.size();
  ScoreSamples out(n, samples);

  if (is_dropout_kind(config_.kind)) {
    const McResult r = mc_probabilities(networks_.front(), contexts, samples,
                                        MaskSeeds{draw_seed, config_.shared_mask}, exec);
    trunk_evaluations_ += r.trunk_evaluations;
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t s = 0; s < samples; ++s)
        out(c, s) = clamp_prob(r.probabilities(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s)));
    return out;
  }

  const std::size_t pool = sample_pool();
  if (samples > pool)
    throw ConfigError("cannot draw " + std::to_string(samples) + " samples from " + std::to_string(pool) +
                      " ensemble members");

  Eigen::MatrixXd probs(static_cast<Eigen::Index>(pool), static_cast<Eigen::Index>(n));
  if (is_multi_network(config_.kind)) {
    for (std::size_t m = 0; m < pool; ++m)
      probs.row(static_cast<Eigen::Index>(m)) = deterministic_probabilities(networks_[m], contexts, exec).row(0);
  } else {
    probs = deterministic_probabilities(networks_.front(), contexts, exec);
  }

  std::vector<std::size_t> pick(pool);
  for (std::size_t c = 0; c < n; ++c) {
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    if (samples < pool) {
      // Distinct members drawn uniformly per context.
      SplitMix64 rng(derive_seed(draw_seed, Stream::draws, c));
      for (std::size_t s = 0; s < samples; ++s) std::swap(pick[s], pick[s + rng.below(pool - s)]);
    }
    for (std::size_t s = 0; s < samples; ++s)
      out(c, s) = clamp_prob(probs(static_cast<Eigen::Index>(pick[s]), static_cast<Eigen::Index>(c)));
  }
  return out;
}

std::vector<double> Sampler::point_predict(const ContextBatch& contexts, Execution exec) const {
  check_contexts(contexts);
  const std::size_t n = contexts.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (const auto& net : networks_) {
    const Eigen::MatrixXd p = deterministic_probabilities(net, contexts, exec);
    mean += p.colwise().mean().transpose();
  }
  mean /= static_cast<double>(networks_.size());
  std::vector<double> out(n);
  for (std::size_t c = 0; c < n; ++c) out[c] = clamp_prob(mean(static_cast<Eigen::Index>(c)));
  return out;
}

RetrainReport Sampler::retrain(std::span<const TrainingExample> data, const TrainSchedule& schedule,
                               Execution exec) {
  if (data.empty()) throw UsageError("retrain needs at least one example");
  ++retrains_;

  std::vector<MemberMask> masks;
  masks.reserve(data.size());
  for (const auto& ex : data) masks.push_back(assign_membership(ex.id));

  RetrainReport report;
  std::vector<MemberTraining> results;

  if (is_multi_network(config_.kind)) {
    results.resize(networks_.size());
    run_jobs(networks_.size(), exec, [&](std::size_t m) {
      std::vector<Example> subset;
      for (std::size_t i = 0; i < data.size(); ++i)
        if (masks[i][m]) subset.push_back({data[i].features, data[i].label});
      results[m] = train_network(networks_[m], states_[m], subset, {}, schedule,
                                 derive_seed(config_.seed, Stream::shuffle, m, retrains_),
                                 derive_seed(config_.seed, Stream::dropout, m));
    });
    for (const auto& r : results) report.member_examples.push_back(r.examples);
  } else {
    std::vector<Example> all;
    all.reserve(data.size());
    std::vector<HeadMask> head_masks;
    const bool multihead = is_multihead(config_.kind);
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (multihead && std::none_of(masks[i].begin(), masks[i].end(), [](auto v) { return v != 0; })) continue;
      all.push_back({data[i].features, data[i].label});
      if (multihead) head_masks.push_back(masks[i]);
    }
    results.push_back(train_network(networks_[0], states_[0], all, head_masks, schedule,
                                    derive_seed(config_.seed, Stream::shuffle, 0, retrains_),
                                    derive_seed(config_.seed, Stream::dropout, 0)));
    if (is_multihead(config_.kind)) {
      report.member_examples.assign(config_.members, 0);
      for (const auto& m : masks)
        for (std::size_t h = 0; h < m.size(); ++h) report.member_examples[h] += m[h];
    } else {
      report.member_examples.push_back(data.size());
    }
  }

  double loss_sum = 0.0;
  for (const auto& r : results) {
    report.steps += r.steps;
    loss_sum += r.loss_sum;
  }
  report.mean_loss = report.steps ? loss_sum / static_cast<double>(report.steps) : 0.0;
  return report;
}

}  // namespace bsim
