#pragma once

// Data-parallel scoring and training kernels. Every kernel has a serial
// reference and an OpenMP version; both split the work into the same chunks
// so their results are bit-identical.

#include <cstddef>
#include <cstdint>
#include <functional>

#include <Eigen/Core>

#include "bsim/features.hpp"
#include "bsim/nncore.hpp"

namespace bsim {

enum class Execution { serial, parallel };

/// Contexts per work unit.
inline constexpr std::size_t kScoringChunk = 32;

/// Seed of the dropout mask used for (context, sample).
struct MaskSeeds {
  std::uint64_t draw_seed = 0;
  bool shared_across_contexts = false;

  std::uint64_t operator()(std::size_t context, std::size_t sample) const noexcept;
};

/// Deterministic per-head probabilities, head_count x contexts.
Eigen::MatrixXd deterministic_probabilities(const NetworkParams& params, const ContextBatch& batch,
                                            Execution exec);

struct McResult {
  Eigen::MatrixXd probabilities;  // contexts x samples
  std::uint64_t trunk_evaluations = 0;
};

/// Monte-Carlo dropout draws. The trunk below the first dropout layer is
/// evaluated once per context; only the layers above it are replayed per sample.
McResult mc_probabilities(const NetworkParams& params, const ContextBatch& batch, std::size_t samples,
                          const MaskSeeds& seeds, Execution exec);

/// Runs job(i) for i in [0, count). Jobs must be independent.
void run_jobs(std::size_t count, Execution exec, const std::function<void(std::size_t)>& job);

namespace serial {
Eigen::MatrixXd deterministic_probabilities(const NetworkParams&, const ContextBatch&);
McResult mc_probabilities(const NetworkParams&, const ContextBatch&, std::size_t, const MaskSeeds&);
void run_jobs(std::size_t count, const std::function<void(std::size_t)>& job);
}  // namespace serial

namespace omp {
Eigen::MatrixXd deterministic_probabilities(const NetworkParams&, const ContextBatch&);
McResult mc_probabilities(const NetworkParams&, const ContextBatch&, std::size_t, const MaskSeeds&);
void run_jobs(std::size_t count, const std::function<void(std::size_t)>& job);
}  // namespace omp

}  // namespace bsim
