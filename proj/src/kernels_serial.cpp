#include "kernel_chunks.hpp"

namespace bsim::serial {

Eigen::MatrixXd deterministic_probabilities(const NetworkParams& params, const ContextBatch& batch) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(params.config.head_count), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t chunk = 0; chunk < detail::chunk_count(batch.size()); ++chunk)
    detail::deterministic_chunk(params, batch, chunk, out);
  return out;
}

McResult mc_probabilities(const NetworkParams& params, const ContextBatch& batch, std::size_t samples,
                          const MaskSeeds& seeds) {
  McResult r;
  r.probabilities.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(samples));
  for (std::size_t chunk = 0; chunk < detail::chunk_count(batch.size()); ++chunk)
    r.trunk_evaluations += detail::mc_chunk(params, batch, samples, seeds, chunk, r.probabilities);
  return r;
}

void run_jobs(std::size_t count, const std::function<void(std::size_t)>& job) {
  for (std::size_t i = 0; i < count; ++i) job(i);
}

}  // namespace bsim::serial
