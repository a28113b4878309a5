#include <doctest.h>

#include <cmath>
#include <set>

#include "bsim/dataio.hpp"
#include "bsim/error.hpp"
#include "bsim/loop.hpp"
#include "bsim/metrics.hpp"
#include "helpers.hpp"

using namespace bsim;
using namespace bsim::test;

TEST_SUITE_BEGIN("loop");

namespace {

ExperimentConfig with(ExperimentConfig c, const nlohmann::json& patch) { return apply_patch(c, patch); }

}  // namespace

TEST_CASE("a run that never leaves the bootstrap phase earns the random CTR") {
  ExperimentConfig c;
  c.environment.synth.seed = 3;
  c.loop.bootstrap_users = 120;
  c.loop.total_visits = 120;
  c.loop.epochs = 1;
  c.seed = 4;
  const auto r = run_experiment(c);
  CHECK(r.report.impressions == 840);
  CHECK(r.report.retrains == 1);
  const double p = r.report.random_ctr;
  const double se = std::sqrt(p * (1.0 - p) / 840.0);
  CHECK(std::abs(r.report.cumulative_ctr - p) <= 3.0 * se);
  for (const auto& imp : r.log) CHECK(imp.policy_tag == "Random");
}

TEST_CASE("runs are reproducible") {
  const auto c = tiny_experiment();
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  CHECK(a.log == b.log);
  CHECK(encode_sampler(*a.sampler) == encode_sampler(*b.sampler));
  CHECK(report_to_json(a.report).dump() == report_to_json(b.report).dump());
  auto d = c;
  d.seed = 6;
  CHECK(run_experiment(d).log != a.log);
}

TEST_CASE("window buffer retrains on the latest visits only") {
  ExperimentConfig c = tiny_experiment();
  c.loop.bootstrap_users = 4;
  c.loop.retrain_every = 4;
  c.loop.total_visits = 8;
  c.environment.synth.ads = 60;
  std::vector<std::uint64_t> rounds;
  std::vector<std::vector<Impression>> flushes;
  RunHooks hooks;
  hooks.on_retrain = [&](std::uint64_t, std::uint64_t round, const Sampler&) { rounds.push_back(round); };
  hooks.on_flush = [&](std::span<const Impression> s) { flushes.emplace_back(s.begin(), s.end()); };
  const auto r = run_experiment(c, hooks);
  CHECK(r.report.retrains == 2);
  CHECK(rounds == std::vector<std::uint64_t>{4, 8});
  REQUIRE(flushes.size() == 2);
  CHECK(flushes[1].size() == 4 * c.loop.slate_size);
  for (const auto& imp : flushes[1]) {
    CHECK(imp.round >= 4);
    CHECK(imp.round < 8);
  }
}

TEST_CASE("paper cadence: 40 visits give two retrains of 140 impressions") {
  ExperimentConfig c = tiny_experiment();
  c.environment.synth.users = 40;
  c.environment.synth.ads = 60;
  c.loop.bootstrap_users = 20;
  c.loop.retrain_every = 20;
  c.loop.slate_size = 7;
  c.loop.total_visits = 40;
  c.loop.epochs = 1;
  std::vector<std::size_t> sizes;
  RunHooks hooks;
  hooks.on_flush = [&](std::span<const Impression> s) { sizes.push_back(s.size()); };
  const auto r = run_experiment(c, hooks);
  CHECK(r.report.retrains == 2);
  CHECK(sizes == std::vector<std::size_t>{140, 140});
}

TEST_CASE("log invariants") {
  auto c = tiny_experiment();
  auto cat = build_catalog(c.environment);
  const auto r = run_experiment(c, cat);
  REQUIRE(r.log.size() == c.loop.total_visits * c.loop.slate_size);
  std::set<std::pair<std::string, std::string>> served;
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    const auto& imp = r.log[i];
    if (i > 0) CHECK(imp.impression_id > r.log[i - 1].impression_id);
    CHECK(imp.run_id == run_id_for(c));
    CHECK(imp.round == i / c.loop.slate_size);
    const auto u = cat->user_index(imp.user_id), a = cat->ad_index(imp.ad_id);
    CHECK_FALSE(cat->is_holdout(u, a));
    CHECK(imp.label == cat->label(u, a));
    CHECK(served.insert({imp.user_id, imp.ad_id}).second);
  }
  double clicks = 0.0;
  std::size_t n = 0;
  for (std::size_t round = 0; round < r.report.ctr_series.size(); ++round) {
    for (; n < r.log.size() && r.log[n].round == round; ++n) clicks += r.log[n].label;
    CHECK(r.report.ctr_series[round] == doctest::Approx(clicks / n).epsilon(1e-12));
  }
  CHECK(r.report.cumulative_ctr == doctest::Approx(clicks / n).epsilon(1e-12));
  CHECK(r.report.regret_series.size() == c.loop.total_visits);
  for (std::size_t i = 1; i < r.report.regret_series.size(); ++i)
    CHECK(r.report.regret_series[i] >= r.report.regret_series[i - 1] - 1e-12);
}

TEST_CASE("checkpoints reproduce predictions on every eligible context") {
  auto c = tiny_experiment();
  const auto cat = build_catalog(c.environment);
  const auto r = run_experiment(c, cat);
  const auto dir = scratch_dir("loop_ckpt");
  save_checkpoint(*r.sampler, dir / "final.bsmp");
  const auto back = load_checkpoint(dir / "final.bsmp");
  for (std::size_t u = 0; u < cat->users(); ++u) {
    std::vector<std::size_t> ads;
    for (std::size_t a = 0; a < cat->ads(); ++a)
      if (!cat->is_holdout(u, a)) ads.push_back(a);
    const auto batch = user_contexts(*cat, u, ads);
    CHECK(back.point_predict(batch) == r.sampler->point_predict(batch));
  }
}

TEST_CASE("exhausted users stop the run early") {
  auto c = tiny_experiment();
  c.environment.synth.users = 3;
  c.environment.synth.ads = 10;
  c.environment.holdout_per_user = 1;
  c.loop.slate_size = 4;
  c.loop.total_visits = 50;
  const auto r = run_experiment(c);
  CHECK(r.report.stopped_early);
  CHECK_FALSE(r.report.stop_reason.empty());
  // Each user sees all 9 servable ads: slates of 4, 4 and a partial 1.
  CHECK(r.report.impressions == 27);
  CHECK(r.report.visits == 9);
}

TEST_CASE("every table row runs") {
  for (const auto& cell : table1_cells()) {
    auto c = tiny_experiment();
    nlohmann::json patch = cell.patch;
    patch["sampler"]["members"] = 3;
    if (patch["policy"]["samples"] != 1) patch["policy"]["samples"] = 3;
    c = with(c, patch);
    CAPTURE(cell.label);
    const auto r = run_experiment(c);
    CHECK(r.report.impressions == c.loop.total_visits * c.loop.slate_size);
    CHECK(r.report.model == cell.label);
    CHECK(r.report.test_pr_auc.has_value());
  }
}

TEST_CASE("greedy collection and warm start") {
  auto c = tiny_experiment();
  const auto cat = build_catalog(c.environment);
  const auto random_only = collect_greedy_dataset(c, cat, c.loop.bootstrap_users, 7);
  CHECK(random_only.size() == c.loop.bootstrap_users * c.loop.slate_size);
  for (const auto& imp : random_only) CHECK(imp.policy_tag == "Random");

  const auto data = collect_greedy_dataset(c, cat, 12, 7);
  CHECK(data.size() == 12 * c.loop.slate_size);
  CHECK(collect_greedy_dataset(c, cat, 12, 7) == data);
  CHECK(data.back().policy_tag == "Greedy");

  Sampler s(make_sampler_config(c.sampler, cat->context_dim(), 1), c.optimizer);
  const auto before = encode_sampler(s);
  warm_start_pretrain(s, *cat, data, 0, 8);
  CHECK(encode_sampler(s) == before);
  const double auc = warm_start_pretrain(s, *cat, data, 20, 8);
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
  CHECK(encode_sampler(s) != before);
  CHECK_THROWS_AS(warm_start_pretrain(s, *cat, {}, 5, 8), UsageError);

  c.warm_start.enabled = true;
  c.warm_start.collect_users = 8;
  c.warm_start.epochs = 5;
  const auto r = run_experiment(c, cat);
  CHECK(r.report.warm_start_train_pr_auc.has_value());
  CHECK(r.log.front().policy_tag != "Random");
}

TEST_CASE("evaluation") {
  auto c = tiny_experiment();
  const auto cat = build_catalog(c.environment);
  const auto r = run_experiment(c, cat);
  const auto m = evaluate_sampler(*r.sampler, *cat, false);
  CHECK(m.cells == cat->users() * c.environment.holdout_per_user);
  CHECK(evaluate_sampler(*r.sampler, *cat, true).cells == cat->users() * cat->ads());

  auto other = c;
  other.environment.synth.user_dim = 21;
  CHECK_THROWS_AS(evaluate_sampler(*r.sampler, *build_catalog(other.environment), false), CompatibilityError);
}

TEST_CASE("invalid configs are rejected before running") {
  auto c = tiny_experiment();
  c.policy.epsilon = 1.5;
  CHECK_THROWS_AS(run_experiment(c), ConfigError);
}

TEST_SUITE_END();
