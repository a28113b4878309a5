#include "bsim/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bsim/error.hpp"

namespace bsim {

namespace {

void require_room(std::size_t slate_size, std::span<const std::size_t> eligible) {
  if (slate_size == 0) throw UsageError("slate size must be at least 1");
  if (eligible.size() < slate_size)
    throw EnvironmentExhausted("only " + std::to_string(eligible.size()) + " eligible candidates for a slate of " +
                               std::to_string(slate_size));
}

void check_ids(std::span<const std::size_t> eligible, std::size_t n) {
  for (auto id : eligible)
    if (id >= n) throw UsageError("eligible candidate " + std::to_string(id) + " has no score");
}

// Higher score first, then lower id.
struct Ranks {
  std::span<const double> scores;
  bool operator()(std::size_t a, std::size_t b) const noexcept {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  }
};

Slate top_k(std::span<const double> scores, std::size_t slate_size, std::span<const std::size_t> eligible) {
  require_room(slate_size, eligible);
  check_ids(eligible, scores.size());
  for (auto id : eligible)
    if (std::isnan(scores[id])) throw InputError("candidate score is NaN");
  Slate ids(eligible.begin(), eligible.end());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(slate_size), ids.end(), Ranks{scores});
  ids.resize(slate_size);
  return ids;
}

}  // namespace

std::string_view to_string(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::random: return "random";
    case PolicyKind::greedy: return "greedy";
    case PolicyKind::epsilon_greedy: return "epsilon_greedy";
    case PolicyKind::thompson: return "thompson";
    case PolicyKind::ucb: return "ucb";
  }
  return "?";
}

PolicyKind policy_kind_from_string(std::string_view name) {
  for (auto k : {PolicyKind::random, PolicyKind::greedy, PolicyKind::epsilon_greedy, PolicyKind::thompson,
                 PolicyKind::ucb})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown policy kind '" + std::string(name) + "'");
}

bool uses_samples(PolicyKind kind) noexcept { return kind == PolicyKind::thompson || kind == PolicyKind::ucb; }

void PolicyConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("policy.epsilon must lie in [0, 1]");
  if (slate_size == 0) throw ConfigError("slate_size must be at least 1");
  if (samples == 0) throw ConfigError("policy.samples must be at least 1");
  if (kind == PolicyKind::thompson && samples != 1) throw ConfigError("thompson sampling draws exactly one sample");
  if (kind == PolicyKind::ucb && (ucb_order_k == 0 || ucb_order_k > samples))
    throw ConfigError("policy.ucb_order_k must lie in [1, samples]");
}

double empirical_quantile(std::span<const double> samples, std::size_t k) {
  if (k == 0 || k > samples.size())
    throw UsageError("order statistic " + std::to_string(k) + " out of range for " + std::to_string(samples.size()) +
                     " samples");
  std::vector<double> v(samples.begin(), samples.end());
  auto nth = v.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(v.begin(), nth, v.end(), std::greater<>{});
  return *nth;
}

std::size_t confidence_level_to_k(double q, std::size_t samples) {
  if (samples == 0) throw UsageError("sample count must be at least 1");
  // The small offset keeps e.g. (1 - 0.9) * 10 from rounding down to 0.
  const double raw = std::floor((1.0 - q) * static_cast<double>(samples) + 1e-9) + 1.0;
  return static_cast<std::size_t>(std::clamp(raw, 1.0, static_cast<double>(samples)));
}

std::vector<std::size_t> all_candidates(std::size_t n) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  return ids;
}

Slate select_greedy(std::span<const double> scores, std::size_t slate_size, std::span<const std::size_t> eligible) {
  return top_k(scores, slate_size, eligible);
}

Slate select_epsilon_greedy(std::span<const double> scores, std::size_t slate_size, double epsilon,
                            std::span<const std::size_t> eligible, std::mt19937_64& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("epsilon must lie in [0, 1]");
  require_room(slate_size, eligible);
  check_ids(eligible, scores.size());
  // Ranked once; exploration removes arbitrary entries, exploitation takes the front.
  Slate remaining(eligible.begin(), eligible.end());
  std::sort(remaining.begin(), remaining.end(), Ranks{scores});
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  Slate slate;
  slate.reserve(slate_size);
  while (slate.size() < slate_size) {
    std::size_t pos = 0;
    if (coin(rng) < epsilon) pos = std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng);
    slate.push_back(remaining[pos]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return slate;
}

Slate select_uniform(std::size_t slate_size, std::span<const std::size_t> eligible, std::mt19937_64& rng) {
  require_room(slate_size, eligible);
  Slate pool(eligible.begin(), eligible.end());
  for (std::size_t s = 0; s < slate_size; ++s) {
    const auto j = std::uniform_int_distribution<std::size_t>(s, pool.size() - 1)(rng);
    std::swap(pool[s], pool[j]);
  }
  pool.resize(slate_size);
  return pool;
}

Slate select_thompson(const ScoreSamples& draws, std::size_t slate_size, std::span<const std::size_t> eligible) {
  if (draws.samples != 1) throw UsageError("thompson sampling expects exactly one draw per candidate");
  return top_k(draws.values, slate_size, eligible);
}

std::vector<double> ucb_scores(const ScoreSamples& draws, std::size_t order_k) {
  if (order_k == 0 || order_k > draws.samples)
    throw UsageError("ucb order " + std::to_string(order_k) + " exceeds " + std::to_string(draws.samples) +
                     " samples");
  std::vector<double> out(draws.candidates);
  for (std::size_t c = 0; c < draws.candidates; ++c) out[c] = empirical_quantile(draws.row(c), order_k);
  return out;
}

Slate select_ucb(const ScoreSamples& draws, std::size_t order_k, std::size_t slate_size,
                 std::span<const std::size_t> eligible) {
  const auto bounds = ucb_scores(draws, order_k);
  return top_k(bounds, slate_size, eligible);
}

}  // namespace bsim
