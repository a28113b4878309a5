#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "bsim/error.hpp"
#include "bsim/policy.hpp"

using namespace bsim;

TEST_SUITE_BEGIN("policy");

namespace {

std::vector<double> iota_values(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

ScoreSamples from_rows(const std::vector<std::vector<double>>& rows) {
  ScoreSamples s(rows.size(), rows.front().size());
  for (std::size_t c = 0; c < rows.size(); ++c)
    for (std::size_t j = 0; j < rows[c].size(); ++j) s(c, j) = rows[c][j];
  return s;
}

std::set<std::size_t> as_set(const Slate& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("empirical quantile") {
  auto ten = iota_values(10);
  std::shuffle(ten.begin(), ten.end(), std::mt19937_64(1));
  CHECK(empirical_quantile(ten, 2) == 9.0);
  auto hundred = iota_values(100);
  std::shuffle(hundred.begin(), hundred.end(), std::mt19937_64(2));
  CHECK(empirical_quantile(hundred, 5) == 96.0);
  const std::vector<double> same(7, 0.25);
  for (std::size_t k = 1; k <= 7; ++k) CHECK(empirical_quantile(same, k) == 0.25);
  CHECK(empirical_quantile(ten, 1) == 10.0);
  CHECK(empirical_quantile(ten, 10) == 1.0);
  CHECK_THROWS_AS(empirical_quantile(ten, 0), UsageError);
  CHECK_THROWS_AS(empirical_quantile(ten, 11), UsageError);
}

TEST_CASE("confidence level to order statistic") {
  CHECK(confidence_level_to_k(0.9, 10) == 2);
  CHECK(confidence_level_to_k(0.999999, 10) == 1);
  CHECK(confidence_level_to_k(0.95, 100) == 6);
  CHECK(confidence_level_to_k(0.01, 10) == 10);
}

TEST_CASE("greedy") {
  const std::vector<double> s{0.9, 0.1, 0.5};
  const auto all = all_candidates(3);
  CHECK(select_greedy(s, 2, all) == Slate{0, 2});
  const std::vector<double> flat(5, 0.3);
  CHECK(select_greedy(flat, 2, all_candidates(5)) == Slate{0, 1});
  CHECK(as_set(select_greedy(s, 3, all)) == std::set<std::size_t>{0, 1, 2});
  const std::vector<std::size_t> some{1, 2};
  CHECK(select_greedy(s, 1, some) == Slate{2});
  CHECK_THROWS_AS(select_greedy(s, 3, some), EnvironmentExhausted);
  CHECK_THROWS_AS(select_greedy(s, 0, all), UsageError);
}

TEST_CASE("greedy is invariant to increasing transforms") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(20), e(20);
    for (std::size_t i = 0; i < 20; ++i) {
      s[i] = u(rng);
      e[i] = std::exp(2.0 * s[i]) + 1.0;
    }
    CHECK(select_greedy(s, 7, all_candidates(20)) == select_greedy(e, 7, all_candidates(20)));
  }
}

TEST_CASE("epsilon greedy") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(30);
  for (auto& v : s) v = u(rng);
  const auto all = all_candidates(30);

  SUBCASE("epsilon 0 is greedy") {
    for (int t = 0; t < 50; ++t) CHECK(select_epsilon_greedy(s, 7, 0.0, all, rng) == select_greedy(s, 7, all));
  }
  SUBCASE("fixed seed reproduces the slate") {
    std::mt19937_64 a(9), b(9);
    CHECK(select_epsilon_greedy(s, 7, 0.1, all, a) == select_epsilon_greedy(s, 7, 0.1, all, b));
  }
  SUBCASE("epsilon 1 draws uniform subsets") {
    const std::vector<double> ten(s.begin(), s.begin() + 10);
    const auto cands = all_candidates(10);
    std::vector<int> counts(10, 0);
    const int trials = 100000;
    const std::size_t k = 3;
    for (int t = 0; t < trials; ++t) {
      const auto slate = select_epsilon_greedy(ten, k, 1.0, cands, rng);
      CHECK(as_set(slate).size() == k);
      for (auto c : slate) ++counts[c];
    }
    for (int c : counts) CHECK(std::abs(static_cast<double>(c) / trials - k / 10.0) < 0.01);
  }
  SUBCASE("overlap with greedy shrinks as epsilon grows") {
    const auto greedy = as_set(select_greedy(s, 7, all));
    std::vector<double> overlap;
    for (double eps : {0.0, 0.5, 1.0}) {
      double total = 0.0;
      for (int t = 0; t < 10000; ++t)
        for (auto c : select_epsilon_greedy(s, 7, eps, all, rng)) total += greedy.count(c);
      overlap.push_back(total / 10000);
    }
    CHECK(overlap[0] == 7.0);
    CHECK(overlap[1] <= overlap[0]);
    CHECK(overlap[2] <= overlap[1]);
  }
  SUBCASE("invalid epsilon") { CHECK_THROWS_AS(select_epsilon_greedy(s, 7, 1.5, all, rng), UsageError); }
}

TEST_CASE("uniform slates") {
  std::mt19937_64 rng(6);
  const std::vector<std::size_t> eligible{3, 8, 11, 12, 20};
  for (int t = 0; t < 100; ++t) {
    const auto slate = select_uniform(3, eligible, rng);
    CHECK(as_set(slate).size() == 3);
    for (auto c : slate) CHECK(std::find(eligible.begin(), eligible.end(), c) != eligible.end());
  }
  CHECK_THROWS_AS(select_uniform(6, eligible, rng), EnvironmentExhausted);
}

TEST_CASE("thompson") {
  CHECK(select_thompson(from_rows({{0.3}, {0.7}}), 1, all_candidates(2)) == Slate{1});
  const std::vector<double> point{0.2, 0.6, 0.4, 0.1};
  CHECK(select_thompson(from_rows({{0.2}, {0.6}, {0.4}, {0.1}}), 2, all_candidates(4)) ==
        select_greedy(point, 2, all_candidates(4)));
  CHECK_THROWS_AS(select_thompson(from_rows({{0.3, 0.2}, {0.7, 0.1}}), 1, all_candidates(2)), UsageError);
}

TEST_CASE("thompson on two Beta posteriors matches P(X > Y)") {
  // Midpoint rule for P(X > Y) = integral of f_X(x) F_Y(x), f_X = 2x, F_Y = 2x - x^2.
  double oracle = 0.0;
  const int cells = 100000;
  for (int i = 0; i < cells; ++i) {
    const double x = (i + 0.5) / cells;
    oracle += 2.0 * x * (2.0 * x - x * x) / cells;
  }
  CHECK(oracle == doctest::Approx(5.0 / 6.0));
  std::mt19937_64 rng(7);
  std::gamma_distribution<double> g1(1.0), g2(2.0);
  auto beta = [&](std::gamma_distribution<double>& a, std::gamma_distribution<double>& b) {
    const double x = a(rng), y = b(rng);
    return x / (x + y);
  };
  const int trials = 100000;
  int arm0 = 0;
  for (int t = 0; t < trials; ++t) {
    ScoreSamples d(2, 1);
    d(0, 0) = beta(g2, g1);
    d(1, 0) = beta(g1, g2);
    arm0 += select_thompson(d, 1, all_candidates(2))[0] == 0;
  }
  CHECK(std::abs(static_cast<double>(arm0) / trials - oracle) < 0.01);
}

TEST_CASE("ucb") {
  std::vector<double> b(10, 0.1);
  b[0] = 0.9;
  const auto draws = from_rows({std::vector<double>(10, 0.5), b});
  CHECK(ucb_scores(draws, 2) == std::vector<double>{0.5, 0.1});
  CHECK(select_ucb(draws, 2, 1, all_candidates(2)) == Slate{0});
  CHECK(select_ucb(draws, 1, 1, all_candidates(2)) == Slate{1});
  CHECK_THROWS_AS(select_ucb(draws, 11, 1, all_candidates(2)), UsageError);

  const auto single = from_rows({{0.2}, {0.6}, {0.4}});
  CHECK(select_ucb(single, 1, 2, all_candidates(3)) == select_greedy(std::vector<double>{0.2, 0.6, 0.4}, 2,
                                                                        all_candidates(3)));
  const auto constants = from_rows({{0.3, 0.3, 0.3}, {0.8, 0.8, 0.8}, {0.5, 0.5, 0.5}});
  CHECK(select_ucb(constants, 2, 2, all_candidates(3)) == Slate{1, 2});
}

TEST_CASE("ucb respects sample dominance and monotone transforms") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 300; ++t) {
    ScoreSamples d(12, 10), e(12, 10);
    for (std::size_t c = 0; c < 12; ++c)
      for (std::size_t j = 0; j < 10; ++j) {
        d(c, j) = u(rng);
        e(c, j) = std::log(d(c, j) / (1.0 - d(c, j)));
      }
    // Candidate 11 dominates candidate 10 sample by sample.
    for (std::size_t j = 0; j < 10; ++j) {
      d(10, j) = 0.3 + 0.2 * u(rng);
      d(11, j) = 0.5 + 0.2 * u(rng);
      e(10, j) = std::log(d(10, j) / (1.0 - d(10, j)));
      e(11, j) = std::log(d(11, j) / (1.0 - d(11, j)));
    }
    const auto slate = select_ucb(d, 2, 12, all_candidates(12));
    CHECK(std::find(slate.begin(), slate.end(), 11) < std::find(slate.begin(), slate.end(), 10));
    CHECK(select_ucb(d, 2, 7, all_candidates(12)) == select_ucb(e, 2, 7, all_candidates(12)));
  }
}

TEST_CASE("policy config validation") {
  PolicyConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PolicyConfig{};
  c.kind = PolicyKind::thompson;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.samples = 1;
  CHECK_NOTHROW(c.validate());
  c = PolicyConfig{};
  c.ucb_order_k = 11;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(policy_kind_from_string("epsilon_greedy") == PolicyKind::epsilon_greedy);
  CHECK_THROWS_AS(policy_kind_from_string("softmax"), ConfigError);
}

TEST_SUITE_END();
