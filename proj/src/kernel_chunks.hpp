#pragma once

// Per-chunk bodies shared by the serial and OpenMP kernels.

#include <algorithm>
#include <cmath>
#include <vector>

#include "bsim/kernels.hpp"
#include "bsim/rng.hpp"

namespace bsim::detail {

inline double stable_sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline std::size_t chunk_count(std::size_t n) noexcept { return (n + kScoringChunk - 1) / kScoringChunk; }

inline void deterministic_chunk(const NetworkParams& params, const ContextBatch& batch, std::size_t chunk,
                                Eigen::MatrixXd& out) {
  const std::size_t begin = chunk * kScoringChunk;
  const std::size_t end = std::min(batch.size(), begin + kScoringChunk);
  const Trunk trunk = trunk_forward(params, batch, begin, end);
  const Eigen::MatrixXd logits = tail_logits(params, trunk, {});
  for (Eigen::Index c = 0; c < logits.cols(); ++c)
    for (Eigen::Index h = 0; h < logits.rows(); ++h)
      out(h, static_cast<Eigen::Index>(begin) + c) = stable_sigmoid(logits(h, c));
}

/// Returns the number of trunk evaluations performed.
inline std::uint64_t mc_chunk(const NetworkParams& params, const ContextBatch& batch, std::size_t samples,
                              const MaskSeeds& seeds, std::size_t chunk, Eigen::MatrixXd& out) {
  const std::size_t begin = chunk * kScoringChunk;
  const std::size_t end = std::min(batch.size(), begin + kScoringChunk);
  const auto m = static_cast<Eigen::Index>(end - begin);
  const auto s_count = static_cast<Eigen::Index>(samples);
  const Trunk trunk = trunk_forward(params, batch, begin, end);

  Trunk replay;
  replay.complete = trunk.complete;
  replay.values.resize(trunk.values.rows(), m * s_count);
  std::vector<std::uint64_t> mask_seeds(static_cast<std::size_t>(m * s_count));
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index s = 0; s < s_count; ++s) {
      replay.values.col(c * s_count + s) = trunk.values.col(c);
      mask_seeds[static_cast<std::size_t>(c * s_count + s)] =
          seeds(begin + static_cast<std::size_t>(c), static_cast<std::size_t>(s));
    }
  const Eigen::MatrixXd logits = tail_logits(params, replay, mask_seeds);
  const double heads = static_cast<double>(logits.rows());
  for (Eigen::Index c = 0; c < m; ++c)
    for (Eigen::Index s = 0; s < s_count; ++s) {
      double p = 0.0;
      for (Eigen::Index h = 0; h < logits.rows(); ++h) p += stable_sigmoid(logits(h, c * s_count + s));
      out(static_cast<Eigen::Index>(begin) + c, s) = p / heads;
    }
  return static_cast<std::uint64_t>(m);
}

}  // namespace bsim::detail
