#include "bsim/loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "bsim/dataio.hpp"
#include "bsim/error.hpp"
#include "bsim/policy.hpp"
#include "bsim/rng.hpp"

namespace bsim {

namespace {

template <class F>
std::optional<double> defined(F&& f) {
  try {
    return f();
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

struct Cell {
  std::uint32_t user;
  std::uint32_t ad;
};

// Point predictions for arbitrary cells, batched per user.
std::vector<double> predict_cells(const Sampler& sampler, const Catalog& catalog, std::span<const Cell> cells) {
  std::vector<std::vector<std::size_t>> by_user(catalog.users());
  for (std::size_t i = 0; i < cells.size(); ++i) by_user[cells[i].user].push_back(i);
  std::vector<double> out(cells.size());
  std::vector<std::size_t> ads;
  for (std::size_t u = 0; u < by_user.size(); ++u) {
    if (by_user[u].empty()) continue;
    ads.clear();
    for (auto i : by_user[u]) ads.push_back(cells[i].ad);
    const auto scores = sampler.point_predict(user_contexts(catalog, u, ads));
    for (std::size_t k = 0; k < ads.size(); ++k) out[by_user[u][k]] = scores[k];
  }
  return out;
}

class Engine {
 public:
  Engine(const ExperimentConfig& config, std::shared_ptr<const Catalog> catalog, const RunHooks& hooks)
      : cfg_(config),
        cat_(std::move(catalog)),
        hooks_(hooks),
        env_(cat_, EnvOptions{config.environment.exclude_shown, config.environment.label_mode},
             derive_seed(config.seed, Stream::environment)),
        sampler_(make_sampler_config(config.sampler, cat_->context_dim(), derive_seed(config.seed, Stream::sampler)),
                 config.optimizer),
        policy_rng_(derive_seed(config.seed, Stream::policy)),
        order_rng_(derive_seed(config.seed, Stream::user_order)),
        run_id_(run_id_for(config)),
        tag_(model_label(config)),
        active_(cat_->users(), 1),
        active_count_(cat_->users()) {}

  Sampler& sampler() { return sampler_; }

  // Marks the model as already trained (warm start) so serving starts at once.
  void skip_bootstrap() {
    trained_ = true;
    base_ = 0;
  }

  RunResult run() {
    const auto& loop = cfg_.loop;
    std::string stop_reason;
    while (visits_ < loop.total_visits) {
      const auto user = next_user();
      if (!user) {
        stop_reason = "every user ran out of eligible ads after " + std::to_string(visits_) + " visits";
        break;
      }
      if (!visit(*user)) continue;
      const bool boundary = (!trained_ && visits_ == loop.bootstrap_users) ||
                            (trained_ && (visits_ - base_) % loop.retrain_every == 0) || visits_ == loop.total_visits;
      if (boundary) retrain();
    }
    if (!stop_reason.empty()) {
      spdlog::info("stopping early: {}", stop_reason);
      if (window_start_ < log_.size()) retrain();
    }
    flush();
    return finish(stop_reason);
  }

 private:
  std::optional<std::size_t> next_user() {
    while (active_count_ > 0) {
      std::size_t u = 0;
      if (cfg_.loop.user_order == UserOrder::uniform_random) {
        auto pick = std::uniform_int_distribution<std::size_t>(0, active_count_ - 1)(order_rng_);
        for (u = 0; u < active_.size(); ++u)
          if (active_[u] && pick-- == 0) break;
      } else {
        if (rotation_pos_ == rotation_.size()) {
          rotation_.clear();
          for (std::size_t i = 0; i < active_.size(); ++i)
            if (active_[i]) rotation_.push_back(i);
          std::shuffle(rotation_.begin(), rotation_.end(), order_rng_);
          rotation_pos_ = 0;
        }
        u = rotation_[rotation_pos_++];
        if (!active_[u]) continue;
      }
      if (!env_.eligible_ads(u).empty()) return u;
      deactivate(u);
    }
    return std::nullopt;
  }

  void deactivate(std::size_t u) {
    if (active_[u]) {
      active_[u] = 0;
      --active_count_;
    }
  }

  bool visit(std::size_t user) {
    const auto eligible = env_.eligible_ads(user);
    if (eligible.empty()) {
      deactivate(user);
      return false;
    }
    const std::size_t k = std::min(cfg_.loop.slate_size, eligible.size());
    const auto ids = all_candidates(eligible.size());
    const std::uint64_t draw_seed = derive_seed(cfg_.seed, Stream::draws, visits_);

    Slate picks;
    std::vector<double> served(eligible.size(), 0.0);
    const auto kind = trained_ ? cfg_.policy.kind : PolicyKind::random;
    if (kind == PolicyKind::random) {
      picks = select_uniform(k, ids, policy_rng_);
    } else {
      const ContextBatch batch = user_contexts(*cat_, user, eligible);
      switch (kind) {
        case PolicyKind::greedy:
          served = sampler_.point_predict(batch);
          picks = select_greedy(served, k, ids);
          break;
        case PolicyKind::epsilon_greedy:
          served = sampler_.point_predict(batch);
          picks = select_epsilon_greedy(served, k, cfg_.policy.epsilon, ids, policy_rng_);
          break;
        case PolicyKind::thompson: {
          const auto draws = sampler_.sample_scores(batch, 1, draw_seed);
          served = draws.column(0);
          picks = select_thompson(draws, k, ids);
          break;
        }
        case PolicyKind::ucb: {
          const auto draws = sampler_.sample_scores(batch, cfg_.policy.samples, draw_seed);
          served = ucb_scores(draws, cfg_.policy.ucb_order_k);
          picks = select_greedy(served, k, ids);
          break;
        }
        case PolicyKind::random: break;
      }
    }

    Slate slate;
    for (auto p : picks) slate.push_back(eligible[p]);
    const auto point = sampler_.point_predict(user_contexts(*cat_, user, slate));
    if (kind == PolicyKind::random)
      for (std::size_t i = 0; i < picks.size(); ++i) served[picks[i]] = point[i];
    if (cat_->truth_ctr) oracle_.push_back(oracle_slate(*cat_, user, eligible, k));

    const auto labels = env_.step(user, slate);
    for (std::size_t i = 0; i < slate.size(); ++i) {
      Impression imp;
      imp.round = visits_;
      imp.user_id = cat_->user_ids[user];
      imp.ad_id = cat_->ad_ids[slate[i]];
      imp.served_score = served[picks[i]];
      imp.point_score = point[i];
      imp.label = labels[i];
      imp.policy_tag = trained_ ? tag_ : "Random";
      imp.impression_id = next_id_++;
      imp.run_id = run_id_;
      log_.push_back(std::move(imp));
      cells_.push_back({static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(slate[i])});
      clicks_ += labels[i];
    }
    ++visits_;
    return true;
  }

  void retrain() {
    const std::size_t begin = cfg_.loop.buffer_mode == BufferMode::window ? window_start_ : 0;
    if (begin == log_.size()) return;
    std::vector<TrainingExample> data;
    data.reserve(log_.size() - begin);
    for (std::size_t i = begin; i < log_.size(); ++i) {
      if (log_[i].run_id != run_id_)
        throw ContractViolation("impression " + std::to_string(log_[i].impression_id) +
                                " was not generated by this run");
      const auto [u, a] = cells_[i];
      data.push_back({log_[i].impression_id,
                      FeatureView{cat_->user_features.row(u), cat_->ad_features.row(a)},
                      static_cast<double>(log_[i].label)});
    }
    const auto report = sampler_.retrain(data, TrainSchedule{cfg_.loop.epochs, cfg_.loop.batch_size});
    ++retrains_;
    if (!trained_) {
      trained_ = true;
      base_ = visits_;
    }
    window_start_ = log_.size();
    spdlog::debug("retrain {} after {} visits: {} examples, {} steps, mean loss {:.5f}", retrains_, visits_,
                  data.size(), report.steps, report.mean_loss);
    flush();
    if (hooks_.on_retrain) hooks_.on_retrain(retrains_, visits_, sampler_);
  }

  void flush() {
    if (hooks_.on_flush && flushed_ < log_.size())
      hooks_.on_flush(std::span<const Impression>(log_).subspan(flushed_));
    flushed_ = log_.size();
  }

  RunResult finish(const std::string& stop_reason) {
    MetricsReport r;
    r.model = tag_;
    r.seed = cfg_.seed;
    r.config_digest = canonical_config_digest(cfg_);
    r.run_id = run_id_;
    r.visits = visits_;
    r.impressions = log_.size();
    r.clicks = clicks_;
    r.retrains = retrains_;
    r.stopped_early = !stop_reason.empty();
    r.stop_reason = stop_reason;
    r.cumulative_ctr = log_.empty() ? 0.0 : static_cast<double>(clicks_) / static_cast<double>(log_.size());
    r.random_ctr = random_policy_ctr(*cat_);
    r.ctr_uplift_pct = r.random_ctr > 0.0 ? ctr_uplift(r.cumulative_ctr, r.random_ctr)
                                          : std::numeric_limits<double>::quiet_NaN();
    if (!log_.empty()) {
      const auto scores = predict_cells(sampler_, *cat_, cells_);
      std::vector<std::uint8_t> labels;
      for (const auto& imp : log_) labels.push_back(imp.label);
      r.train_pr_auc = defined([&] { return pr_auc(scores, labels); });
    }
    const auto eval = evaluate_sampler(sampler_, *cat_, false);
    r.test_pr_auc = eval.pr_auc;
    r.roc_auc = eval.roc_auc;
    r.rce_pct = eval.rce_pct;
    r.log_loss = eval.log_loss;
    r.ctr_series = cumulative_ctr_series(log_);
    if (cat_->truth_ctr) r.regret_series = regret(log_, *cat_, oracle_).cumulative;

    RunResult out;
    out.report = std::move(r);
    out.log = std::move(log_);
    out.sampler.emplace(std::move(sampler_));
    out.oracle_slates = std::move(oracle_);
    return out;
  }

  const ExperimentConfig& cfg_;
  std::shared_ptr<const Catalog> cat_;
  RunHooks hooks_;
  Environment env_;
  Sampler sampler_;
  std::mt19937_64 policy_rng_;
  std::mt19937_64 order_rng_;
  std::string run_id_;
  std::string tag_;

  std::vector<std::uint8_t> active_;
  std::size_t active_count_;
  std::vector<std::size_t> rotation_;
  std::size_t rotation_pos_ = 0;

  std::vector<Impression> log_;
  std::vector<Cell> cells_;
  std::vector<std::vector<std::size_t>> oracle_;
  std::size_t window_start_ = 0;
  std::size_t flushed_ = 0;
  std::uint64_t next_id_ = 0;
  std::uint64_t visits_ = 0;
  std::uint64_t clicks_ = 0;
  std::uint64_t retrains_ = 0;
  std::uint64_t base_ = 0;
  bool trained_ = false;
};

std::vector<Cell> cells_of(const Catalog& catalog, std::span<const Impression> log) {
  std::unordered_map<std::string, std::uint32_t> users, ads;
  for (std::size_t i = 0; i < catalog.users(); ++i) users[catalog.user_ids[i]] = static_cast<std::uint32_t>(i);
  for (std::size_t i = 0; i < catalog.ads(); ++i) ads[catalog.ad_ids[i]] = static_cast<std::uint32_t>(i);
  std::vector<Cell> out;
  out.reserve(log.size());
  for (const auto& imp : log) {
    const auto u = users.find(imp.user_id);
    const auto a = ads.find(imp.ad_id);
    if (u == users.end() || a == ads.end())
      throw LookupError("impression " + std::to_string(imp.impression_id) + " references an unknown id");
    out.push_back({u->second, a->second});
  }
  return out;
}

}  // namespace

std::shared_ptr<const Catalog> build_catalog(const EnvironmentConfig& env) {
  Catalog cat = env.catalog ? load_catalog(env.catalog->users, env.catalog->ads, env.catalog->labels,
                                           env.rating_threshold)
                            : synth_generate(env.synth);
  split_holdout(cat, env.holdout_per_user, derive_seed(env.synth.seed, Stream::holdout));
  return std::make_shared<const Catalog>(std::move(cat));
}

std::string run_id_for(const ExperimentConfig& config) { return canonical_config_digest(config).substr(0, 16); }

RunResult run_experiment(const ExperimentConfig& config, std::shared_ptr<const Catalog> catalog,
                         const RunHooks& hooks) {
  validate(config);
  ExperimentConfig cfg = config;
  cfg.policy.slate_size = cfg.loop.slate_size;
  Engine engine(cfg, catalog, hooks);
  std::optional<double> warm_pr_auc;
  if (cfg.warm_start.enabled) {
    const auto dataset =
        collect_greedy_dataset(cfg, catalog, cfg.warm_start.collect_users, derive_seed(cfg.seed, Stream::warm_start));
    warm_pr_auc = warm_start_pretrain(engine.sampler(), *catalog, dataset, cfg.warm_start.epochs, cfg.loop.batch_size);
    engine.skip_bootstrap();
  }
  auto result = engine.run();
  result.report.warm_start_train_pr_auc = warm_pr_auc;
  return result;
}

RunResult run_experiment(const ExperimentConfig& config, const RunHooks& hooks) {
  validate(config);
  return run_experiment(config, build_catalog(config.environment), hooks);
}

std::vector<Impression> collect_greedy_dataset(const ExperimentConfig& config, std::shared_ptr<const Catalog> catalog,
                                               std::size_t users, std::uint64_t seed) {
  if (users == 0) throw UsageError("greedy collection needs at least one user visit");
  ExperimentConfig g = config;
  g.name = "Greedy";
  g.seed = seed;
  g.sampler = SamplerRecipe{};
  g.sampler.kind = SamplerKind::sgd_ensemble;
  g.sampler.members = 1;
  g.sampler.hidden = config.sampler.hidden;
  g.policy.kind = PolicyKind::greedy;
  g.policy.samples = 1;
  g.warm_start.enabled = false;
  g.loop.total_visits = users;
  g.loop.bootstrap_users = std::min(config.loop.bootstrap_users, users);
  g.policy.slate_size = g.loop.slate_size;
  validate(g);
  Engine engine(g, std::move(catalog), RunHooks{});
  return engine.run().log;
}

double warm_start_pretrain(Sampler& sampler, const Catalog& catalog, std::span<const Impression> dataset,
                           std::size_t epochs, std::size_t batch_size) {
  if (dataset.empty()) throw UsageError("warm start needs a nonempty dataset");
  const auto cells = cells_of(catalog, dataset);
  if (epochs > 0) {
    std::vector<TrainingExample> data;
    data.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
      data.push_back({dataset[i].impression_id,
                      FeatureView{catalog.user_features.row(cells[i].user), catalog.ad_features.row(cells[i].ad)},
                      static_cast<double>(dataset[i].label)});
    sampler.retrain(data, TrainSchedule{epochs, batch_size});
  }
  const auto scores = predict_cells(sampler, catalog, cells);
  std::vector<std::uint8_t> labels;
  for (const auto& imp : dataset) labels.push_back(imp.label);
  return pr_auc(scores, labels);
}

EvalMetrics evaluate_sampler(const Sampler& sampler, const Catalog& catalog, bool all_cells) {
  if (sampler.config().net.input_dim != catalog.context_dim())
    throw CompatibilityError("model expects " + std::to_string(sampler.config().net.input_dim) +
                             " features, catalog provides " + std::to_string(catalog.context_dim()));
  std::vector<Cell> cells;
  std::vector<std::uint8_t> labels;
  for (std::size_t u = 0; u < catalog.users(); ++u)
    for (std::size_t a = 0; a < catalog.ads(); ++a)
      if (all_cells || catalog.is_holdout(u, a)) {
        cells.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(a)});
        labels.push_back(catalog.label(u, a));
      }
  EvalMetrics m;
  m.cells = cells.size();
  if (cells.empty()) return m;
  const auto scores = predict_cells(sampler, catalog, cells);
  m.pr_auc = defined([&] { return pr_auc(scores, labels); });
  m.roc_auc = defined([&] { return roc_auc(scores, labels); });
  m.rce_pct = defined([&] { return rce(scores, labels); });
  m.log_loss = defined([&] { return log_loss(scores, labels); });
  return m;
}

}  // namespace bsim
