#include <doctest.h>

#include <cmath>
#include <random>

#include "bsim/env.hpp"
#include "bsim/error.hpp"
#include "bsim/impression.hpp"
#include "bsim/metrics.hpp"
#include "oracles.hpp"

using namespace bsim;
using namespace bsim::test;

TEST_SUITE_BEGIN("metrics");

namespace {

struct Instance {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

// Coarse scores so that ties are common.
Instance random_instance(std::mt19937_64& rng) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
  const int levels = std::uniform_int_distribution<int>(2, 50)(rng);
  std::uniform_int_distribution<int> level(0, levels);
  std::bernoulli_distribution coin(std::uniform_real_distribution<double>(0.05, 0.95)(rng));
  Instance x;
  for (std::size_t i = 0; i < n; ++i) {
    x.scores.push_back(static_cast<double>(level(rng)) / levels);
    x.labels.push_back(coin(rng));
  }
  x.labels[0] = 1;
  x.labels[1] = 0;
  return x;
}

double ce(double p, int y) { return -(y ? std::log(p) : std::log(1.0 - p)); }

}  // namespace

TEST_CASE("ctr uplift") {
  CHECK(ctr_uplift(0.1, 0.1) == 0.0);
  CHECK(ctr_uplift(0.2390, 0.1000) == doctest::Approx(139.0));
  CHECK(ctr_uplift(0.0, 0.3) == -100.0);
  CHECK_THROWS_AS(ctr_uplift(0.1, 0.0), UndefinedMetric);
}

TEST_CASE("pr auc") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  const std::vector<std::uint8_t> y{1, 0, 1, 0};
  CHECK(pr_auc(s, y) == doctest::Approx(pr_auc_oracle(s, y)).epsilon(1e-12));
  CHECK(pr_auc(s, y) == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
  CHECK(pr_auc(s, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
  const std::vector<double> flat(10, 0.4);
  std::vector<std::uint8_t> balanced(10, 0);
  for (std::size_t i = 0; i < 5; ++i) balanced[i] = 1;
  CHECK(pr_auc(flat, balanced) == 0.5);
  std::vector<std::uint8_t> three(10, 0);
  three[2] = three[5] = three[9] = 1;
  CHECK(pr_auc(flat, three) == 0.3);
  CHECK_THROWS_AS(pr_auc(flat, std::vector<std::uint8_t>(10, 0)), UndefinedMetric);
}

TEST_CASE("roc auc") {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6};
  CHECK(roc_auc(s, std::vector<std::uint8_t>{1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>(4, 0.2), std::vector<std::uint8_t>{1, 0, 1, 0}) == 0.5);
  CHECK_THROWS_AS(roc_auc(s, std::vector<std::uint8_t>(4, 1)), UndefinedMetric);
}

TEST_CASE("auc oracles on random instances") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 1000; ++t) {
    const auto x = random_instance(rng);
    CHECK(std::abs(pr_auc(x.scores, x.labels) - pr_auc_oracle(x.scores, x.labels)) < 1e-9);
    CHECK(std::abs(roc_auc(x.scores, x.labels) - roc_auc_oracle(x.scores, x.labels)) < 1e-9);
  }
}

TEST_CASE("auc invariances") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    auto x = random_instance(rng);
    for (auto& s : x.scores) s += 1e-6 * u(rng);
    std::vector<double> warped, negated;
    for (double s : x.scores) {
      warped.push_back(std::exp(3.0 * s) - 2.0);
      negated.push_back(-s);
    }
    CHECK(pr_auc(warped, x.labels) == doctest::Approx(pr_auc(x.scores, x.labels)).epsilon(1e-12));
    CHECK(roc_auc(warped, x.labels) == doctest::Approx(roc_auc(x.scores, x.labels)).epsilon(1e-12));
    CHECK(roc_auc(x.scores, x.labels) + roc_auc(negated, x.labels) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("log loss and rce") {
  const std::vector<double> s{0.8, 0.3};
  const std::vector<std::uint8_t> y{1, 0};
  const double model = 0.5 * (ce(0.8, 1) + ce(0.3, 0));
  const double naive = 0.5 * (ce(0.5, 1) + ce(0.5, 0));
  CHECK(log_loss(s, y) == doctest::Approx(model).epsilon(1e-12));
  CHECK(rce(s, y) == doctest::Approx(100.0 * (naive - model) / naive).epsilon(1e-12));

  const std::vector<std::uint8_t> labels{1, 0, 0, 1, 0, 0, 0, 1};
  CHECK(std::abs(rce(std::vector<double>(8, 3.0 / 8.0), labels)) < 1e-9);
  std::vector<double> perfect(labels.begin(), labels.end());
  CHECK(rce(perfect, labels) > 99.99);
  CHECK(std::isfinite(log_loss(perfect, labels)));
  CHECK_THROWS_AS(rce(s, std::vector<std::uint8_t>{1, 1}), UndefinedMetric);
}

TEST_CASE("regret and ctr series") {
  SynthSpec spec;
  spec.users = 2;
  spec.ads = 6;
  spec.user_dim = 4;
  spec.ad_dim = 4;
  spec.user_numeric = 2;
  spec.ad_numeric = 2;
  spec.category_width = 2;
  spec.seed = 8;
  const auto c = synth_generate(spec);
  std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  const auto best0 = oracle_slate(c, 0, all, 2);
  const auto best1 = oracle_slate(c, 1, all, 2);

  auto imp = [&](std::uint64_t round, std::size_t u, std::size_t a, std::uint8_t label, std::uint64_t id) {
    Impression i;
    i.round = round;
    i.user_id = c.user_ids[u];
    i.ad_id = c.ad_ids[a];
    i.label = label;
    i.impression_id = id;
    return i;
  };
  std::size_t worst = 0;
  for (std::size_t a = 1; a < 6; ++a)
    if (c.truth(1, a) < c.truth(1, worst)) worst = a;
  const std::size_t other = worst == best1[0] ? best1[1] : best1[0];
  const std::vector<Impression> log{imp(0, 0, best0[0], 1, 0), imp(0, 0, best0[1], 0, 1),
                                    imp(1, 1, worst, 0, 2), imp(1, 1, other, 1, 3)};
  const std::vector<std::vector<std::size_t>> oracle{best0, best1};
  const auto r = regret(log, c, oracle);
  REQUIRE(r.per_round.size() == 2);
  CHECK(r.per_round[0] == 0.0);
  const double expected = c.truth(1, best1[0]) + c.truth(1, best1[1]) - c.truth(1, worst) - c.truth(1, other);
  CHECK(r.per_round[1] == doctest::Approx(expected));
  CHECK(r.per_round[1] >= 0.0);
  CHECK(r.cumulative[1] == doctest::Approx(expected));

  CHECK(cumulative_ctr_series(log) == std::vector<double>{0.5, 0.5});

  Catalog uniform = c;
  std::fill(uniform.truth_ctr->begin(), uniform.truth_ctr->end(), 0.2);
  for (double v : regret(log, uniform, oracle).per_round) CHECK(v == 0.0);

  Catalog no_truth = c;
  no_truth.truth_ctr.reset();
  CHECK_THROWS_AS(regret(log, no_truth, oracle), UsageError);
}

TEST_SUITE_END();
