// Serial reference vs OpenMP for the scoring and training kernels.

#include <numeric>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "bsim/config.hpp"
#include "bsim/env.hpp"
#include "bsim/kernels.hpp"
#include "bsim/loop.hpp"
#include "bsim/posterior.hpp"

namespace {

using namespace bsim;

struct Fixture {
  std::shared_ptr<const Catalog> catalog = build_catalog(ExperimentConfig{}.environment);
  std::vector<std::size_t> ads;
  Fixture() {
    ads.resize(300);
    std::iota(ads.begin(), ads.end(), std::size_t{0});
  }
  ContextBatch batch() const { return user_contexts(*catalog, 0, ads); }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Execution mode(const benchmark::State& state) { return state.range(0) ? Execution::parallel : Execution::serial; }

Sampler sampler(SamplerKind kind) {
  SamplerRecipe r;
  r.kind = kind;
  return Sampler(make_sampler_config(r, fixture().catalog->context_dim(), 1), OptimizerConfig{});
}

void deterministic(benchmark::State& state) {
  const auto s = sampler(SamplerKind::bootstrap);
  const auto batch = fixture().batch();
  for (auto _ : state) benchmark::DoNotOptimize(deterministic_probabilities(s.networks()[0], batch, mode(state)));
}

void mc_dropout(benchmark::State& state) {
  const auto s = sampler(SamplerKind::mc_dropout);
  const auto batch = fixture().batch();
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(mc_probabilities(s.networks()[0], batch, 10, MaskSeeds{++seed, false}, mode(state)));
}

void ensemble_scores(benchmark::State& state) {
  const auto s = sampler(SamplerKind::bootstrap);
  const auto batch = fixture().batch();
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(s.sample_scores(batch, 10, ++seed, mode(state)));
}

void ensemble_retrain(benchmark::State& state) {
  auto s = sampler(SamplerKind::bootstrap);
  const auto batch = fixture().batch();
  std::mt19937_64 rng(3);
  std::vector<TrainingExample> data;
  for (std::size_t i = 0; i < batch.size(); ++i)
    data.push_back({i, batch.context(i), static_cast<double>(std::bernoulli_distribution(0.2)(rng))});
  for (auto _ : state) benchmark::DoNotOptimize(s.retrain(data, TrainSchedule{1, 64}, mode(state)));
}

}  // namespace

BENCHMARK(deterministic)->ArgName("omp")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(mc_dropout)->ArgName("omp")->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(ensemble_scores)->ArgName("omp")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(ensemble_retrain)->ArgName("omp")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
