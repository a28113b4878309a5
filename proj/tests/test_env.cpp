#include <doctest.h>

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include "bsim/env.hpp"
#include "bsim/error.hpp"
#include "helpers.hpp"

using namespace bsim;
using namespace bsim::test;

TEST_SUITE_BEGIN("env");

namespace {

void put(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

struct CsvFiles {
  std::filesystem::path dir, users, ads, labels;
  explicit CsvFiles(const std::string& name)
      : dir(scratch_dir(name)), users(dir / "users.csv"), ads(dir / "ads.csv"), labels(dir / "labels.csv") {
    put(users, "user_id,c_colour,n_age\nu1,red,20\nu2,green,40\nu3,blue,30\n");
    put(ads, "ad_id,n_price\na1,1\na2,3\n");
    put(labels, "user_id,ad_id,rating\nu1,a1,5\nu1,a2,2\nu2,a1,4\nu2,a2,3\nu3,a1,1\nu3,a2,4\n");
  }
};

SynthSpec small_spec(std::uint64_t seed = 3) {
  SynthSpec s;
  s.users = 20;
  s.ads = 30;
  s.user_dim = 12;
  s.ad_dim = 14;
  s.user_numeric = 2;
  s.ad_numeric = 2;
  s.category_width = 5;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("csv catalog") {
  CsvFiles f("env_csv");
  const auto c = load_catalog(f.users, f.ads, f.labels, 4);
  CHECK(c.users() == 3);
  CHECK(c.ads() == 2);
  CHECK(c.user_features.cols == 4);
  CHECK(c.ad_features.cols == 1);
  // Categories sort as blue, green, red.
  CHECK(c.user_schema[0].categories == std::vector<std::string>{"blue", "green", "red"});
  for (std::size_t u = 0; u < 3; ++u) {
    const auto r = c.user_features.row(u);
    CHECK(r[0] + r[1] + r[2] == 1.0);
  }
  CHECK(c.user_features(0, 2) == 1.0);
  CHECK(c.user_features(0, 3) == 0.0);
  CHECK(c.user_features(1, 3) == 1.0);
  CHECK(c.user_features(2, 3) == 0.5);
  CHECK(c.ad_features(1, 0) == 1.0);
  CHECK(c.labels == std::vector<std::uint8_t>{1, 0, 1, 0, 0, 1});
  CHECK(load_catalog(f.users, f.ads, f.labels, 5).labels == std::vector<std::uint8_t>{1, 0, 0, 0, 0, 0});
  CHECK(c.user_index("u3") == 2);
  CHECK_THROWS_AS(c.ad_index("zz"), LookupError);
}

TEST_CASE("csv catalog integrity") {
  CsvFiles f("env_bad");
  SUBCASE("missing cell") {
    put(f.labels, "user_id,ad_id,rating\nu1,a1,5\nu1,a2,2\nu2,a1,4\nu2,a2,3\nu3,a1,1\n");
    CHECK_THROWS_AS(load_catalog(f.users, f.ads, f.labels), IntegrityError);
  }
  SUBCASE("unknown user") {
    put(f.labels, "user_id,ad_id,rating\nu1,a1,5\nu1,a2,2\nu2,a1,4\nu2,a2,3\nu3,a1,1\nu9,a2,4\n");
    CHECK_THROWS_AS(load_catalog(f.users, f.ads, f.labels), IntegrityError);
  }
  SUBCASE("duplicate cell") {
    put(f.labels, "user_id,ad_id,rating\nu1,a1,5\nu1,a1,2\nu2,a1,4\nu2,a2,3\nu3,a1,1\nu3,a2,4\n");
    CHECK_THROWS_AS(load_catalog(f.users, f.ads, f.labels), IntegrityError);
  }
  SUBCASE("bad column prefix") {
    put(f.ads, "ad_id,price\na1,1\na2,3\n");
    CHECK_THROWS_AS(load_catalog(f.users, f.ads, f.labels), ParseError);
  }
}

TEST_CASE("holdout split") {
  auto c = synth_generate(small_spec());
  split_holdout(c, 5, 9);
  for (std::size_t u = 0; u < c.users(); ++u) {
    std::size_t n = 0;
    for (std::size_t a = 0; a < c.ads(); ++a) n += c.is_holdout(u, a);
    CHECK(n == 5);
  }
  auto d = synth_generate(small_spec());
  split_holdout(d, 5, 9);
  CHECK(c.holdout == d.holdout);
  split_holdout(d, 5, 10);
  CHECK(c.holdout != d.holdout);
  split_holdout(d, 0, 9);
  CHECK(std::accumulate(d.holdout.begin(), d.holdout.end(), 0) == 0);
  CHECK_THROWS_AS(split_holdout(d, 30, 9), ConfigError);
}

TEST_CASE("holdout cells are chosen uniformly") {
  SynthSpec s = small_spec();
  s.users = 1;
  s.ads = 10;
  auto c = synth_generate(s);
  std::vector<int> counts(10, 0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed) {
    split_holdout(c, 3, seed);
    for (std::size_t a = 0; a < 10; ++a) counts[a] += c.is_holdout(0, a);
  }
  for (int n : counts) CHECK(std::abs(n / 5000.0 - 0.3) < 0.03);
}

TEST_CASE("synthetic catalog") {
  const auto c = synth_generate(small_spec());
  CHECK_NOTHROW(c.validate());
  CHECK(c.context_dim() == 26);
  CHECK(synth_generate(small_spec()).labels == c.labels);
  CHECK(*synth_generate(small_spec()).truth_ctr == *c.truth_ctr);
  CHECK(synth_generate(small_spec(4)).labels != c.labels);
  for (double p : *c.truth_ctr) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("synthetic calibration and label concentration") {
  SynthSpec s;
  s.seed = 1;
  const auto c = synth_generate(s);
  CHECK(c.context_dim() == 573);
  const auto& truth = *c.truth_ctr;
  const double mean_truth = std::accumulate(truth.begin(), truth.end(), 0.0) / truth.size();
  CHECK(std::abs(mean_truth - s.base_rate) <= 0.1 * s.base_rate);
  double var = 0.0;
  for (double p : truth) var += p * (1.0 - p);
  const double se = std::sqrt(var) / truth.size();
  const double rate = std::accumulate(c.labels.begin(), c.labels.end(), 0.0) / c.labels.size();
  CHECK(std::abs(rate - mean_truth) <= 3.0 * se);
}

TEST_CASE("zero truth network gives the base rate everywhere") {
  SynthSpec s = small_spec();
  s.zero_truth = true;
  s.base_rate = 0.3;
  const auto c = synth_generate(s);
  for (double p : *c.truth_ctr) CHECK(p == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("context features") {
  SynthSpec s;
  const auto c = synth_generate(s);
  const auto x = context_features(c, 3, 7);
  CHECK(x.size() == 573);
  CHECK(x == context_features(c, 3, 7));
  for (std::size_t i = 0; i < 250; ++i) CHECK(x[i] == c.user_features(3, i));
  for (std::size_t i = 0; i < 323; ++i) CHECK(x[250 + i] == c.ad_features(7, i));
  CHECK_THROWS_AS(context_features(c, 120, 0), LookupError);
  CHECK_THROWS_AS(context_features(c, 0, 300), LookupError);

  Catalog z = synth_generate(small_spec());
  std::fill(z.user_features.data.begin(), z.user_features.data.end(), 0.0);
  const auto y = context_features(z, 1, 2);
  for (std::size_t i = 0; i < 12; ++i) CHECK(y[i] == 0.0);

  const std::vector<std::size_t> ads{4, 9};
  const auto batch = user_contexts(c, 3, ads);
  CHECK(batch.size() == 2);
  CHECK(batch.context(1).materialize() == context_features(c, 3, 9));
}

TEST_CASE("environment stepping") {
  SynthSpec s;
  auto cat = synth_generate(s);
  split_holdout(cat, 5, 2);
  auto shared = std::make_shared<const Catalog>(cat);
  Environment env(shared, EnvOptions{}, 1);
  CHECK(env.eligible_ads(0).size() == 295);
  const auto fresh = env.eligible_ads(0);
  const std::vector<std::size_t> slate(fresh.begin(), fresh.begin() + 7);
  const auto labels = env.step(0, slate);
  CHECK(labels.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(labels[i] == cat.label(0, slate[i]));
  CHECK(env.eligible_ads(0).size() == 288);
  CHECK(env.shown_count(0) == 7);
  CHECK(env.round() == 1);
  CHECK_THROWS_AS(env.step(0, slate), ContractViolation);

  std::size_t held = 0;
  while (!cat.is_holdout(1, held)) ++held;
  CHECK_THROWS_AS(env.step(1, std::vector<std::size_t>{held}), ContractViolation);
  CHECK_THROWS_AS(env.step(1, std::vector<std::size_t>{300}), ContractViolation);

  Environment again(shared, EnvOptions{}, 99);
  CHECK(again.step(0, slate) == labels);

  Environment reexpose(shared, EnvOptions{false, LabelMode::frozen}, 1);
  reexpose.step(0, slate);
  CHECK(reexpose.eligible_ads(0).size() == 295);
  CHECK_NOTHROW(reexpose.step(0, slate));
}

TEST_CASE("resampled labels follow the ground truth") {
  SynthSpec s = small_spec();
  s.zero_truth = true;
  s.base_rate = 0.25;
  auto cat = std::make_shared<const Catalog>(synth_generate(s));
  Environment env(cat, EnvOptions{false, LabelMode::resample}, 4);
  std::vector<std::size_t> ads(cat->ads());
  std::iota(ads.begin(), ads.end(), std::size_t{0});
  double clicks = 0.0;
  for (int r = 0; r < 400; ++r)
    for (auto l : env.step(static_cast<std::size_t>(r) % cat->users(), ads)) clicks += l;
  const double n = 400.0 * cat->ads();
  CHECK(std::abs(clicks / n - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST_CASE("random policy CTR") {
  auto c = synth_generate(small_spec());
  split_holdout(c, 4, 1);
  double sum = 0.0, n = 0.0;
  for (std::size_t u = 0; u < c.users(); ++u)
    for (std::size_t a = 0; a < c.ads(); ++a)
      if (!c.is_holdout(u, a)) {
        sum += c.label(u, a);
        n += 1.0;
      }
  CHECK(random_policy_ctr(c) == doctest::Approx(sum / n).epsilon(1e-12));
  std::fill(c.labels.begin(), c.labels.end(), 1);
  CHECK(random_policy_ctr(c) == 1.0);
  for (std::size_t i = 0; i < c.labels.size(); ++i) c.labels[i] = static_cast<std::uint8_t>(i % 2);
  split_holdout(c, 0, 1);
  CHECK(random_policy_ctr(c) == 0.5);
}

TEST_CASE("oracle slate") {
  const auto c = synth_generate(small_spec());
  std::vector<std::size_t> eligible(c.ads());
  std::iota(eligible.begin(), eligible.end(), std::size_t{0});
  const auto slate = oracle_slate(c, 2, eligible, 5);
  REQUIRE(slate.size() == 5);
  double worst_in = 1.0, best_out = 0.0;
  for (auto a : eligible) {
    const bool in = std::find(slate.begin(), slate.end(), a) != slate.end();
    if (in) worst_in = std::min(worst_in, c.truth(2, a));
    else best_out = std::max(best_out, c.truth(2, a));
  }
  CHECK(worst_in >= best_out);
}

TEST_SUITE_END();
