#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bsim {

using FeatureVector = std::vector<double>;

/// A context vector stored as two adjacent pieces, e.g. user features
/// followed by ad features. Either piece may be empty.
struct FeatureView {
  std::span<const double> lead;
  std::span<const double> trail;

  FeatureView() = default;
  FeatureView(std::span<const double> whole) : lead(whole) {}  // NOLINT: implicit by intent
  FeatureView(const FeatureVector& whole) : lead(whole) {}     // NOLINT
  FeatureView(std::span<const double> l, std::span<const double> t) : lead(l), trail(t) {}

  std::size_t size() const noexcept { return lead.size() + trail.size(); }
  double operator[](std::size_t i) const noexcept {
    return i < lead.size() ? lead[i] : trail[i - lead.size()];
  }
  FeatureVector materialize() const;
};

/// Contexts that share a common leading segment. Every context is
/// concat(shared, rows[i]); the shared part is evaluated once per batch.
struct ContextBatch {
  std::span<const double> shared;
  std::vector<std::span<const double>> rows;

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t width() const noexcept {
    return shared.size() + (rows.empty() ? 0 : rows.front().size());
  }
  FeatureView context(std::size_t i) const { return {shared, rows[i]}; }

  static ContextBatch from_vectors(std::span<const FeatureVector> contexts);
};

}  // namespace bsim
