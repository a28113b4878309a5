#pragma once

// Simulated ad-serving environment over a full user x ad label matrix, either
// loaded from CSV files or generated from a synthetic ground-truth CTR network.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bsim/features.hpp"

namespace bsim {

/// Dense row-major matrix of doubles.
struct RowMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

/// Contiguous block of feature columns produced from one raw column.
struct FeatureBlock {
  std::string name;
  bool categorical = false;
  std::size_t width = 1;
  std::vector<std::string> categories;  // categorical only, one per column
};

struct Catalog {
  RowMatrix user_features;  // U x d_u
  RowMatrix ad_features;    // A x d_a
  std::vector<FeatureBlock> user_schema;
  std::vector<FeatureBlock> ad_schema;
  std::vector<std::string> user_ids;
  std::vector<std::string> ad_ids;
  std::vector<std::uint8_t> labels;   // U x A, row-major
  std::vector<std::uint8_t> holdout;  // U x A, empty until split_holdout
  std::optional<std::vector<double>> truth_ctr;  // synthetic catalogs only

  std::size_t users() const noexcept { return user_ids.size(); }
  std::size_t ads() const noexcept { return ad_ids.size(); }
  std::size_t context_dim() const noexcept { return user_features.cols + ad_features.cols; }
  std::size_t cell(std::size_t user, std::size_t ad) const noexcept { return user * ads() + ad; }

  std::uint8_t label(std::size_t user, std::size_t ad) const { return labels[cell(user, ad)]; }
  bool is_holdout(std::size_t user, std::size_t ad) const {
    return !holdout.empty() && holdout[cell(user, ad)] != 0;
  }
  double truth(std::size_t user, std::size_t ad) const;

  std::size_t user_index(const std::string& id) const;
  std::size_t ad_index(const std::string& id) const;

  /// Throws IntegrityError when shapes, labels or one-hot blocks are inconsistent.
  void validate() const;
};

/// CSV schemas: users.csv `user_id,<c_/n_ columns>`, ads.csv `ad_id,...`,
/// labels.csv `user_id,ad_id,rating` with one row per (user, ad) cell.
/// Categorical columns are one-hot encoded, numeric ones min-max scaled to
/// [0, 1]; ratings >= rating_threshold become clicks.
Catalog load_catalog(const std::filesystem::path& users_path, const std::filesystem::path& ads_path,
                     const std::filesystem::path& labels_path, int rating_threshold = 4);

/// Marks `per_user` uniformly chosen ads per user as held out.
void split_holdout(Catalog& catalog, std::size_t per_user, std::uint64_t seed);

struct SynthSpec {
  std::size_t users = 120;
  std::size_t ads = 300;
  std::size_t user_dim = 250;
  std::size_t ad_dim = 323;
  std::size_t user_numeric = 8;  // numeric columns; the rest are one-hot blocks
  std::size_t ad_numeric = 8;
  std::size_t category_width = 10;
  std::size_t truth_hidden = 16;
  double logit_scale = 2.0;  // standard deviation of ground-truth logits before the shift
  double base_rate = 0.2;    // mean ground-truth CTR after calibration
  bool zero_truth = false;   // all-zero truth network (constant CTR)
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SynthSpec&) const = default;
};

/// Catalog whose labels are Bernoulli(CTR) draws frozen into the matrix; the
/// ground-truth CTRs are kept alongside.
Catalog synth_generate(const SynthSpec& spec);

FeatureVector context_features(const Catalog& catalog, std::size_t user, std::size_t ad);

/// Contexts for one user against `ads`, sharing the user's features.
ContextBatch user_contexts(const Catalog& catalog, std::size_t user, std::span<const std::size_t> ads);

/// Mean label over non-holdout cells: the expected CTR of uniform slates.
double random_policy_ctr(const Catalog& catalog);

/// Top-`slate_size` ads of `eligible` by ground-truth CTR (ties to lower id).
std::vector<std::size_t> oracle_slate(const Catalog& catalog, std::size_t user, std::span<const std::size_t> eligible,
                                      std::size_t slate_size);

enum class LabelMode { frozen, resample };

struct EnvOptions {
  bool exclude_shown = true;
  LabelMode label_mode = LabelMode::frozen;
};

class Environment {
 public:
  Environment(std::shared_ptr<const Catalog> catalog, EnvOptions options, std::uint64_t seed);

  const Catalog& catalog() const noexcept { return *catalog_; }
  std::shared_ptr<const Catalog> catalog_ptr() const noexcept { return catalog_; }
  const EnvOptions& options() const noexcept { return options_; }
  std::uint64_t round() const noexcept { return round_; }

  /// All ads minus the user's holdout cells and (by default) ads already shown.
  std::vector<std::size_t> eligible_ads(std::size_t user) const;

  /// Serves `slate` to `user` and returns one label per ad.
  std::vector<std::uint8_t> step(std::size_t user, std::span<const std::size_t> slate);

  std::size_t shown_count(std::size_t user) const;

 private:
  std::shared_ptr<const Catalog> catalog_;
  EnvOptions options_;
  std::vector<std::uint8_t> shown_;
  std::mt19937_64 rng_;
  std::uint64_t round_ = 0;
};

}  // namespace bsim
