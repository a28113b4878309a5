#pragma once

#include <cmath>
#include <cstring>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bsim/config.hpp"
#include "bsim/impression.hpp"
#include "bsim/nncore.hpp"
#include "bsim/posterior.hpp"

namespace bsim::test {

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline NetworkConfig small_net(std::size_t in, std::vector<std::size_t> hidden, std::size_t heads = 1,
                               double rate = 0.0, DropoutPlacement placement = DropoutPlacement::none) {
  NetworkConfig c;
  c.input_dim = in;
  c.layer_sizes = std::move(hidden);
  c.head_count = heads;
  c.dropout_rate = rate;
  c.dropout_placement = placement;
  return c;
}

/// A small, fast experiment on a synthetic catalog.
inline ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.environment.synth.users = 12;
  c.environment.synth.ads = 40;
  c.environment.synth.user_dim = 20;
  c.environment.synth.ad_dim = 24;
  c.environment.synth.user_numeric = 2;
  c.environment.synth.ad_numeric = 2;
  c.environment.synth.category_width = 6;
  c.environment.synth.seed = 11;
  c.environment.holdout_per_user = 3;
  c.sampler.hidden = {8, 6};
  c.sampler.hybrid_units = 4;
  c.sampler.members = 3;
  c.policy.samples = 3;
  c.policy.ucb_order_k = 1;
  c.loop.bootstrap_users = 4;
  c.loop.retrain_every = 4;
  c.loop.slate_size = 3;
  c.loop.epochs = 3;
  c.loop.batch_size = 8;
  c.loop.total_visits = 16;
  c.seed = 5;
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bsim_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// A sampler of random kind and shape whose parameters are arbitrary finite
/// doubles, including signed zeros and subnormals.
inline Sampler random_sampler(std::mt19937_64& rng) {
  constexpr SamplerKind kinds[] = {SamplerKind::bootstrap,     SamplerKind::multihead, SamplerKind::sgd_ensemble,
                                   SamplerKind::multihead_sgd, SamplerKind::mc_dropout, SamplerKind::hybrid};
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  SamplerRecipe r;
  r.kind = kinds[pick(0, 5)];
  r.members = pick(1, 4);
  r.p_keep = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
  r.hidden.assign(pick(1, 3), 0);
  for (auto& h : r.hidden) h = pick(1, 6);
  r.hybrid_units = pick(1, 5);
  r.dropout_rate = std::uniform_real_distribution<double>(0.05, 0.9)(rng);
  r.shared_mask = pick(0, 1) == 1;
  OptimizerConfig opt;
  opt.kind = pick(0, 1) ? OptimizerKind::sgd : OptimizerKind::rmsprop;
  opt.learning_rate = std::uniform_real_distribution<double>(1e-4, 1.0)(rng);
  opt.decay = std::uniform_real_distribution<double>(0.0, 0.99)(rng);
  Sampler fresh(make_sampler_config(r, pick(1, 9), rng()), opt);

  std::vector<NetworkParams> nets(fresh.networks().begin(), fresh.networks().end());
  std::normal_distribution<double> gauss(0.0, 3.0);
  for (auto& n : nets) {
    auto theta = n.flatten();
    for (auto& v : theta) {
      switch (pick(0, 9)) {
        case 0: v = -0.0; break;
        case 1: v = 4.9e-324; break;
        case 2: v = 1e300; break;
        default: v = gauss(rng);
      }
    }
    n.assign_flat(theta);
    n.step_count = rng();
  }
  return Sampler(fresh.config(), opt, std::move(nets));
}

/// Strictly increasing ids; scores and ids exercise awkward text cases.
inline std::vector<Impression> random_impressions(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::string tags[] = {"ucb", "thompson", "random", "epsilon_greedy", "greedy"};
  std::vector<Impression> log;
  std::uint64_t id = rng() % 1000;
  for (std::size_t i = 0; i < n; ++i) {
    Impression m;
    m.round = i / 7;
    m.user_id = "user \"" + std::to_string(rng() % 200) + "\"";
    m.ad_id = "ad,\u00e9" + std::to_string(rng() % 300);
    m.served_score = u(rng) < 0.05 ? 1e-310 : u(rng);
    m.point_score = u(rng) / 3.0;
    m.label = static_cast<std::uint8_t>(rng() % 2);
    m.policy_tag = tags[rng() % 5];
    id += 1 + rng() % 3;
    m.impression_id = id;
    m.run_id = "0123456789abcdef";
    log.push_back(m);
  }
  return log;
}

/// Bit-level equality of every parameter and of the configuration.
inline bool same_sampler(const Sampler& a, const Sampler& b) {
  if (!(a.config() == b.config()) || !(a.optimizer_config() == b.optimizer_config())) return false;
  if (a.networks().size() != b.networks().size()) return false;
  for (std::size_t i = 0; i < a.networks().size(); ++i) {
    const auto x = a.networks()[i].flatten(), y = b.networks()[i].flatten();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) return false;
    if (!(a.networks()[i].config == b.networks()[i].config)) return false;
    if (a.networks()[i].step_count != b.networks()[i].step_count) return false;
  }
  return true;
}

}  // namespace bsim::test
