#include <exception>
#include <mutex>

#include "kernel_chunks.hpp"

namespace bsim::omp {

namespace {

// Exceptions may not cross an OpenMP region; keep the first and rethrow.
class FirstError {
 public:
  template <class Fn>
  void capture(Fn&& fn) noexcept {
    try {
      fn();
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mu_;
  std::exception_ptr error_;
};

}  // namespace

Eigen::MatrixXd deterministic_probabilities(const NetworkParams& params, const ContextBatch& batch) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(params.config.head_count), static_cast<Eigen::Index>(batch.size()));
  const auto chunks = static_cast<long>(detail::chunk_count(batch.size()));
  FirstError err;
#pragma omp parallel for schedule(dynamic)
  for (long chunk = 0; chunk < chunks; ++chunk)
    err.capture([&] { detail::deterministic_chunk(params, batch, static_cast<std::size_t>(chunk), out); });
  err.rethrow();
  return out;
}

McResult mc_probabilities(const NetworkParams& params, const ContextBatch& batch, std::size_t samples,
                          const MaskSeeds& seeds) {
  McResult r;
  r.probabilities.resize(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(samples));
  const auto chunks = static_cast<long>(detail::chunk_count(batch.size()));
  std::uint64_t trunks = 0;
  FirstError err;
#pragma omp parallel for schedule(dynamic) reduction(+ : trunks)
  for (long chunk = 0; chunk < chunks; ++chunk)
    err.capture([&] {
      trunks += detail::mc_chunk(params, batch, samples, seeds, static_cast<std::size_t>(chunk), r.probabilities);
    });
  err.rethrow();
  r.trunk_evaluations = trunks;
  return r;
}

void run_jobs(std::size_t count, const std::function<void(std::size_t)>& job) {
  FirstError err;
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < static_cast<long>(count); ++i) err.capture([&] { job(static_cast<std::size_t>(i)); });
  err.rethrow();
}

}  // namespace bsim::omp
