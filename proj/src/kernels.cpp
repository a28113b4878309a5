#include "bsim/kernels.hpp"

#include "bsim/rng.hpp"

namespace bsim {

std::uint64_t MaskSeeds::operator()(std::size_t context, std::size_t sample) const noexcept {
  if (shared_across_contexts) return derive_seed(draw_seed, Stream::dropout, sample);
  return derive_seed(draw_seed, Stream::dropout, sample, context);
}

Eigen::MatrixXd deterministic_probabilities(const NetworkParams& params, const ContextBatch& batch,
                                            Execution exec) {
  return exec == Execution::parallel ? omp::deterministic_probabilities(params, batch)
                                     : serial::deterministic_probabilities(params, batch);
}

McResult mc_probabilities(const NetworkParams& params, const ContextBatch& batch, std::size_t samples,
                          const MaskSeeds& seeds, Execution exec) {
  return exec == Execution::parallel ? omp::mc_probabilities(params, batch, samples, seeds)
                                     : serial::mc_probabilities(params, batch, samples, seeds);
}

void run_jobs(std::size_t count, Execution exec, const std::function<void(std::size_t)>& job) {
  if (exec == Execution::parallel)
    omp::run_jobs(count, job);
  else
    serial::run_jobs(count, job);
}

}  // namespace bsim
