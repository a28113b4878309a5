#include <doctest.h>

#include <set>

#include "bsim/config.hpp"
#include "bsim/error.hpp"
#include "helpers.hpp"

using namespace bsim;
using nlohmann::json;

TEST_SUITE_BEGIN("config");

namespace {

std::string error_of(const json& doc) {
  try {
    validate(config_from_json(doc));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults are the standard offline recipe") {
  const auto c = config_from_json(json::object());
  CHECK(validation_errors(c).empty());
  CHECK(c.sampler.kind == SamplerKind::hybrid);
  CHECK(c.sampler.hidden == std::vector<std::size_t>{100, 50});
  CHECK(c.sampler.hybrid_units == 20);
  CHECK(c.sampler.dropout_rate == 0.5);
  CHECK(c.policy.kind == PolicyKind::ucb);
  CHECK(c.policy.epsilon == 0.1);
  CHECK(c.policy.samples == 10);
  CHECK(c.policy.ucb_order_k == 2);
  CHECK(c.loop.bootstrap_users == 20);
  CHECK(c.loop.retrain_every == 20);
  CHECK(c.loop.slate_size == 7);
  CHECK(c.loop.epochs == 100);
  CHECK(c.loop.batch_size == 64);
  CHECK(c.optimizer.kind == OptimizerKind::rmsprop);
  CHECK(c.optimizer.learning_rate == 0.1);
  CHECK(c.optimizer.decay == 0.5);
  CHECK(c.environment.synth.users == 120);
  CHECK(c.environment.synth.ads == 300);
  CHECK(c.environment.synth.user_dim + c.environment.synth.ad_dim == 573);
  CHECK(c.environment.holdout_per_user == 5);
  CHECK(model_label(c) == "Hybrid UCB");
}

TEST_CASE("json round trip") {
  auto c = test::tiny_experiment();
  c.policy.kind = PolicyKind::thompson;
  c.policy.samples = 1;
  c.loop.buffer_mode = BufferMode::cumulative;
  c.optimizer.decay_reading = DecayReading::lr_schedule;
  c.environment.catalog = CatalogPaths{"u.csv", "a.csv", "l.csv"};
  const auto doc = json::parse(to_json(c).dump());
  const auto back = config_from_json(doc);
  CHECK(to_json(back) == to_json(c));
}

TEST_CASE("invalid documents report every problem") {
  const auto msg = error_of(json::parse(R"({"policy": {"epsilon": 1.5}, "loop": {"epochs": 0}})"));
  CHECK(msg.find("policy.epsilon") != std::string::npos);
  CHECK(msg.find("loop.epochs") != std::string::npos);

  try {
    config_from_json(json::parse(R"({"polcy": {}, "loop": {"epochs": "many", "bogus": 1}, "sampler": {"kind": "x"}})"));
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    CHECK(m.find("polcy") != std::string::npos);
    CHECK(m.find("loop.epochs") != std::string::npos);
    CHECK(m.find("loop.bogus") != std::string::npos);
    CHECK(m.find("sampler.kind") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json(json::array()), ConfigError);
}

TEST_CASE("cross-module invariants") {
  CHECK(error_of(json::parse(R"({"policy": {"ucb_order_k": 11}})")).find("ucb_order_k") != std::string::npos);
  CHECK(error_of(json::parse(R"({"policy": {"kind": "thompson"}})")).find("policy.samples") != std::string::npos);
  CHECK(error_of(json::parse(R"({"sampler": {"kind": "bootstrap", "members": 5}})")).find("sampler.members") !=
        std::string::npos);
  CHECK(error_of(json::parse(R"({"sampler": {"dropout_rate": 0.0}})")).find("dropout_rate") != std::string::npos);
  CHECK(error_of(json::parse(R"({"sampler": {"kind": "mc_dropout", "dropout_rate": 0.0}})")).empty());
  CHECK(error_of(json::parse(R"({"optimizer": {"learning_rate": 0}})")).find("learning_rate") != std::string::npos);
  CHECK(error_of(json::parse(R"({"environment": {"holdout_per_user": 300}})")).find("holdout_per_user") !=
        std::string::npos);
}

TEST_CASE("overrides") {
  json doc = json::parse(to_json(ExperimentConfig{}).dump());
  apply_override(doc, "policy.kind", "greedy");
  apply_override(doc, "loop.epochs", 7);
  const auto c = config_from_json(doc);
  CHECK(c.policy.kind == PolicyKind::greedy);
  CHECK(c.loop.epochs == 7);
  CHECK_THROWS_AS(apply_override(doc, "policy.nonexistent", 1), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "nothing.here", 1), ConfigError);
}

TEST_CASE("table rows") {
  const auto cells = table1_cells();
  REQUIRE(cells.size() == 12);
  std::set<std::string> labels;
  for (const auto& cell : cells) {
    const auto c = apply_patch(ExperimentConfig{}, cell.patch);
    CHECK(validation_errors(c).empty());
    json no_name = cell.patch;
    no_name.erase("name");
    CHECK(model_label(apply_patch(ExperimentConfig{}, no_name)) == cell.label);
    labels.insert(cell.label);
  }
  CHECK(labels.size() == 12);
  CHECK(labels.count("Multihead SGD UCB") == 1);
  CHECK(labels.count("Bootstrap UCB") == 1);

  const auto t2 = table2_cells();
  REQUIRE(t2.size() == 4);
  for (const auto& cell : t2) {
    const auto c = apply_patch(ExperimentConfig{}, cell.patch);
    CHECK(c.warm_start.enabled);
    CHECK(validation_errors(c).empty());
  }
  CHECK(apply_patch(ExperimentConfig{}, t2[3].patch).warm_start.epochs == 500);
}

TEST_CASE("sweep seeds") {
  const ExperimentConfig base;
  const auto a = sweep_run_config(base, 1, 0, 3);
  const auto b = sweep_run_config(base, 1, 5, 3);
  const auto c = sweep_run_config(base, 1, 0, 4);
  CHECK(a.environment.synth.seed == b.environment.synth.seed);
  CHECK(a.seed != b.seed);
  CHECK(a.environment.synth.seed != c.environment.synth.seed);
  CHECK(sweep_run_config(base, 1, 0, 3).seed == a.seed);
  CHECK(sweep_run_config(base, 2, 0, 3).seed != a.seed);
}

TEST_SUITE_END();
