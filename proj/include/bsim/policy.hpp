#pragma once

// Slate selection: greedy, epsilon-greedy, Thompson sampling and UCB over
// empirical quantiles of posterior samples. Candidate ids are indices into
// the score vector (or score-sample rows); ties go to the lowest id.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bsim/posterior.hpp"

namespace bsim {

enum class PolicyKind { random, greedy, epsilon_greedy, thompson, ucb };

std::string_view to_string(PolicyKind kind) noexcept;
PolicyKind policy_kind_from_string(std::string_view name);

/// Policies that act on posterior samples rather than point scores.
bool uses_samples(PolicyKind kind) noexcept;

struct PolicyConfig {
  PolicyKind kind = PolicyKind::ucb;
  double epsilon = 0.1;
  std::size_t ucb_order_k = 2;  // k-th largest of the samples
  std::size_t samples = 10;     // posterior draws per candidate
  std::size_t slate_size = 7;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

using Slate = std::vector<std::size_t>;

/// k-th largest of `samples` (1 = maximum). No interpolation.
double empirical_quantile(std::span<const double> samples, std::size_t k);

/// Order-statistic index for a one-sided confidence level q with S samples:
/// floor((1 - q) * S) + 1, clamped to [1, S].
std::size_t confidence_level_to_k(double q, std::size_t samples);

/// 0, 1, ..., n-1.
std::vector<std::size_t> all_candidates(std::size_t n);

Slate select_greedy(std::span<const double> scores, std::size_t slate_size, std::span<const std::size_t> eligible);

/// Slot by slot: best remaining candidate with probability 1 - epsilon,
/// otherwise a uniformly chosen remaining candidate.
Slate select_epsilon_greedy(std::span<const double> scores, std::size_t slate_size, double epsilon,
                            std::span<const std::size_t> eligible, std::mt19937_64& rng);

/// Uniform slate of distinct candidates.
Slate select_uniform(std::size_t slate_size, std::span<const std::size_t> eligible, std::mt19937_64& rng);

/// Top-K of a single posterior draw per candidate.
Slate select_thompson(const ScoreSamples& draws, std::size_t slate_size, std::span<const std::size_t> eligible);

/// Top-K by the k-th largest sample of each candidate.
Slate select_ucb(const ScoreSamples& draws, std::size_t order_k, std::size_t slate_size,
                 std::span<const std::size_t> eligible);

/// Per-candidate UCB scores (k-th largest sample of each row).
std::vector<double> ucb_scores(const ScoreSamples& draws, std::size_t order_k);

}  // namespace bsim
