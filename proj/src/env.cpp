#include "bsim/env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "bsim/dataio.hpp"
#include "bsim/error.hpp"
#include "bsim/rng.hpp"

namespace bsim {

namespace {

double parse_number(const std::string& text, const std::string& where) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError(where + ": '" + text + "' is not a finite number");
  return v;
}

struct EntityTable {
  std::vector<std::string> ids;
  RowMatrix features;
  std::vector<FeatureBlock> schema;
};

EntityTable load_entities(const std::filesystem::path& path, const std::string& id_column) {
  const CsvTable table = read_csv(path);
  if (table.header.empty() || table.header.front() != id_column)
    throw ParseError(path.string() + ": first column must be '" + id_column + "'");

  EntityTable out;
  const std::size_t n = table.rows.size();
  std::set<std::string> seen;
  for (const auto& row : table.rows) {
    if (!seen.insert(row.front()).second) throw IntegrityError(path.string() + ": duplicate id '" + row.front() + "'");
    out.ids.push_back(row.front());
  }

  // Expand every raw column into its feature block.
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 1; j < table.header.size(); ++j) {
    const std::string& name = table.header[j];
    const std::string where = path.string() + " column '" + name + "'";
    if (name.rfind("c_", 0) == 0) {
      std::set<std::string> values;
      for (const auto& row : table.rows) values.insert(row[j]);
      FeatureBlock block{name.substr(2), true, values.size(), {values.begin(), values.end()}};
      std::map<std::string, std::size_t> slot;
      for (std::size_t k = 0; k < block.categories.size(); ++k) slot[block.categories[k]] = k;
      for (std::size_t k = 0; k < block.width; ++k) {
        std::vector<double> col(n, 0.0);
        for (std::size_t r = 0; r < n; ++r)
          if (slot.at(table.rows[r][j]) == k) col[r] = 1.0;
        columns.push_back(std::move(col));
      }
      out.schema.push_back(std::move(block));
    } else if (name.rfind("n_", 0) == 0) {
      std::vector<double> col(n);
      for (std::size_t r = 0; r < n; ++r) col[r] = parse_number(table.rows[r][j], where);
      const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
      const double min = n ? *lo : 0.0;
      const double span = n ? *hi - *lo : 0.0;
      for (auto& v : col) v = span > 0.0 ? (v - min) / span : 0.0;
      columns.push_back(std::move(col));
      out.schema.push_back({name.substr(2), false, 1, {}});
    } else {
      throw ParseError(where + ": feature columns must start with 'c_' or 'n_'");
    }
  }

  out.features = RowMatrix(n, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c)
    for (std::size_t r = 0; r < n; ++r) out.features(r, c) = columns[c][r];
  return out;
}

double sigmoid(double z) noexcept { return 1.0 / (1.0 + std::exp(-z)); }

// One-hot blocks of `width` columns covering `categorical` columns.
std::vector<std::size_t> block_widths(std::size_t categorical, std::size_t width) {
  std::vector<std::size_t> out;
  if (categorical == 0) return out;
  const std::size_t full = std::max<std::size_t>(1, categorical / width);
  for (std::size_t b = 0; b < full; ++b) out.push_back(width);
  out.back() += categorical - full * width;  // remainder joins the last block
  if (categorical < width) out = {categorical};
  return out;
}

void fill_entities(RowMatrix& m, std::vector<FeatureBlock>& schema, std::size_t numeric, std::size_t width,
                   std::mt19937_64& rng, const std::string& prefix) {
  const std::size_t categorical = m.cols - numeric;
  const auto widths = block_widths(categorical, width);
  std::size_t col = 0;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    FeatureBlock block{prefix + "cat" + std::to_string(b), true, widths[b], {}};
    for (std::size_t k = 0; k < widths[b]; ++k) block.categories.push_back("v" + std::to_string(k));
    std::uniform_int_distribution<std::size_t> pick(0, widths[b] - 1);
    for (std::size_t r = 0; r < m.rows; ++r) m(r, col + pick(rng)) = 1.0;
    col += widths[b];
    schema.push_back(std::move(block));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < numeric; ++k, ++col) {
    for (std::size_t r = 0; r < m.rows; ++r) m(r, col) = u(rng);
    schema.push_back({prefix + "num" + std::to_string(k), false, 1, {}});
  }
}

}  // namespace

double Catalog::truth(std::size_t user, std::size_t ad) const {
  if (!truth_ctr) throw UsageError("catalog has no ground-truth CTRs");
  return (*truth_ctr)[cell(user, ad)];
}

std::size_t Catalog::user_index(const std::string& id) const {
  const auto it = std::find(user_ids.begin(), user_ids.end(), id);
  if (it == user_ids.end()) throw LookupError("unknown user id '" + id + "'");
  return static_cast<std::size_t>(it - user_ids.begin());
}

std::size_t Catalog::ad_index(const std::string& id) const {
  const auto it = std::find(ad_ids.begin(), ad_ids.end(), id);
  if (it == ad_ids.end()) throw LookupError("unknown ad id '" + id + "'");
  return static_cast<std::size_t>(it - ad_ids.begin());
}

void Catalog::validate() const {
  const std::size_t u = users(), a = ads();
  if (user_features.rows != u || ad_features.rows != a) throw IntegrityError("feature rows differ from id counts");
  if (labels.size() != u * a) throw IntegrityError("label matrix is not fully populated");
  if (!holdout.empty() && holdout.size() != u * a) throw IntegrityError("holdout mask has the wrong size");
  if (truth_ctr && truth_ctr->size() != u * a) throw IntegrityError("ground-truth matrix has the wrong size");
  for (auto l : labels)
    if (l > 1) throw IntegrityError("labels must be binary");
  auto check = [](const RowMatrix& m, const std::vector<FeatureBlock>& schema, const char* what) {
    for (double v : m.data)
      if (!std::isfinite(v)) throw IntegrityError(std::string(what) + " features contain non-finite values");
    if (schema.empty()) return;
    std::size_t total = 0;
    for (const auto& b : schema) total += b.width;
    if (total != m.cols) throw IntegrityError(std::string(what) + " schema width differs from feature columns");
    for (std::size_t r = 0; r < m.rows; ++r) {
      std::size_t col = 0;
      for (const auto& b : schema) {
        if (b.categorical) {
          double sum = 0.0;
          for (std::size_t k = 0; k < b.width; ++k) sum += m(r, col + k);
          if (sum != 1.0) throw IntegrityError(std::string(what) + " one-hot block '" + b.name + "' does not sum to 1");
        }
        col += b.width;
      }
    }
  };
  check(user_features, user_schema, "user");
  check(ad_features, ad_schema, "ad");
}

Catalog load_catalog(const std::filesystem::path& users_path, const std::filesystem::path& ads_path,
                     const std::filesystem::path& labels_path, int rating_threshold) {
  EntityTable users = load_entities(users_path, "user_id");
  EntityTable ads = load_entities(ads_path, "ad_id");

  Catalog cat;
  cat.user_ids = std::move(users.ids);
  cat.ad_ids = std::move(ads.ids);
  cat.user_features = std::move(users.features);
  cat.ad_features = std::move(ads.features);
  cat.user_schema = std::move(users.schema);
  cat.ad_schema = std::move(ads.schema);

  std::unordered_map<std::string, std::size_t> user_pos, ad_pos;
  for (std::size_t i = 0; i < cat.user_ids.size(); ++i) user_pos[cat.user_ids[i]] = i;
  for (std::size_t i = 0; i < cat.ad_ids.size(); ++i) ad_pos[cat.ad_ids[i]] = i;

  const CsvTable labels = read_csv(labels_path);
  if (labels.header != std::vector<std::string>{"user_id", "ad_id", "rating"})
    throw ParseError(labels_path.string() + ": header must be user_id,ad_id,rating");
  std::vector<std::uint8_t> filled(cat.users() * cat.ads(), 0);
  cat.labels.assign(filled.size(), 0);
  for (std::size_t r = 0; r < labels.rows.size(); ++r) {
    const auto& row = labels.rows[r];
    const auto u = user_pos.find(row[0]);
    const auto a = ad_pos.find(row[1]);
    if (u == user_pos.end()) throw IntegrityError("labels reference unknown user '" + row[0] + "'");
    if (a == ad_pos.end()) throw IntegrityError("labels reference unknown ad '" + row[1] + "'");
    const std::size_t cell = cat.cell(u->second, a->second);
    if (filled[cell]) throw IntegrityError("duplicate label for user '" + row[0] + "', ad '" + row[1] + "'");
    filled[cell] = 1;
    const double rating = parse_number(row[2], labels_path.string() + " line " + std::to_string(r + 2));
    cat.labels[cell] = rating >= rating_threshold ? 1 : 0;
  }
  const auto missing = std::count(filled.begin(), filled.end(), std::uint8_t{0});
  if (missing > 0)
    throw IntegrityError("label matrix is missing " + std::to_string(missing) + " (user, ad) cells");
  cat.validate();
  return cat;
}

void split_holdout(Catalog& catalog, std::size_t per_user, std::uint64_t seed) {
  const std::size_t a = catalog.ads();
  if (per_user >= a)
    throw ConfigError("holdout of " + std::to_string(per_user) + " ads per user leaves nothing to serve from " +
                      std::to_string(a));
  catalog.holdout.assign(catalog.users() * a, 0);
  std::vector<std::size_t> ids(a);
  for (std::size_t u = 0; u < catalog.users(); ++u) {
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(seed, Stream::holdout, u));
    for (std::size_t k = 0; k < per_user; ++k) {
      const auto j = std::uniform_int_distribution<std::size_t>(k, a - 1)(rng);
      std::swap(ids[k], ids[j]);
      catalog.holdout[catalog.cell(u, ids[k])] = 1;
    }
  }
}

void SynthSpec::validate() const {
  if (users == 0 || ads == 0) throw ConfigError("synthetic catalog needs at least one user and one ad");
  if (user_dim == 0 || ad_dim == 0) throw ConfigError("synthetic feature dimensions must be positive");
  if (user_numeric > user_dim || ad_numeric > ad_dim) throw ConfigError("more numeric columns than features");
  if (category_width < 2) throw ConfigError("category_width must be at least 2");
  if (truth_hidden == 0) throw ConfigError("truth_hidden must be positive");
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw ConfigError("base_rate must lie in (0, 1)");
  if (!(logit_scale >= 0.0) || !std::isfinite(logit_scale)) throw ConfigError("logit_scale must be nonnegative");
}

Catalog synth_generate(const SynthSpec& spec) {
  spec.validate();
  Catalog cat;
  std::mt19937_64 feat_rng(derive_seed(spec.seed, Stream::environment, 0));
  cat.user_features = RowMatrix(spec.users, spec.user_dim);
  cat.ad_features = RowMatrix(spec.ads, spec.ad_dim);
  fill_entities(cat.user_features, cat.user_schema, spec.user_numeric, spec.category_width, feat_rng, "u");
  fill_entities(cat.ad_features, cat.ad_schema, spec.ad_numeric, spec.category_width, feat_rng, "a");
  for (std::size_t u = 0; u < spec.users; ++u) cat.user_ids.push_back("u" + std::to_string(u));
  for (std::size_t a = 0; a < spec.ads; ++a) cat.ad_ids.push_back("a" + std::to_string(a));

  // Ground-truth network: concat(user, ad) -> ReLU hidden -> logit.
  const std::size_t in = spec.user_dim + spec.ad_dim;
  const std::size_t hid = spec.truth_hidden;
  std::vector<double> w1(hid * in, 0.0), b1(hid, 0.0), w2(hid, 0.0);
  if (!spec.zero_truth) {
    std::mt19937_64 net_rng(derive_seed(spec.seed, Stream::environment, 1));
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& w : w1) w = g(net_rng);
    for (auto& b : b1) b = g(net_rng);
    for (auto& w : w2) w = g(net_rng);
  }
  const std::size_t cells = spec.users * spec.ads;
  std::vector<double> logits(cells);
  std::vector<double> user_part(hid);
  for (std::size_t u = 0; u < spec.users; ++u) {
    const auto ur = cat.user_features.row(u);
    for (std::size_t h = 0; h < hid; ++h) {
      double s = b1[h];
      for (std::size_t j = 0; j < spec.user_dim; ++j) s += w1[h * in + j] * ur[j];
      user_part[h] = s;
    }
    for (std::size_t a = 0; a < spec.ads; ++a) {
      const auto ar = cat.ad_features.row(a);
      double z = 0.0;
      for (std::size_t h = 0; h < hid; ++h) {
        double s = user_part[h];
        for (std::size_t j = 0; j < spec.ad_dim; ++j) s += w1[h * in + spec.user_dim + j] * ar[j];
        z += w2[h] * std::max(s, 0.0);
      }
      logits[u * spec.ads + a] = z;
    }
  }

  const double mean = std::accumulate(logits.begin(), logits.end(), 0.0) / static_cast<double>(cells);
  double var = 0.0;
  for (double z : logits) var += (z - mean) * (z - mean);
  const double sd = std::sqrt(var / static_cast<double>(cells));
  if (sd > 0.0)
    for (auto& z : logits) z = spec.logit_scale * (z - mean) / sd;
  else
    std::fill(logits.begin(), logits.end(), 0.0);

  // Shift so the mean CTR hits base_rate; monotone in the shift, so bisect.
  auto mean_ctr = [&](double shift) {
    double s = 0.0;
    for (double z : logits) s += sigmoid(z + shift);
    return s / static_cast<double>(cells);
  };
  double shift = std::log(spec.base_rate / (1.0 - spec.base_rate));
  if (sd > 0.0) {
    double lo = -60.0, hi = 60.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (mean_ctr(mid) < spec.base_rate ? lo : hi) = mid;
    }
    shift = 0.5 * (lo + hi);
  }

  cat.truth_ctr.emplace(cells);
  cat.labels.resize(cells);
  std::mt19937_64 label_rng(derive_seed(spec.seed, Stream::labels));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t c = 0; c < cells; ++c) {
    const double p = sigmoid(logits[c] + shift);
    (*cat.truth_ctr)[c] = p;
    cat.labels[c] = u01(label_rng) < p ? 1 : 0;
  }
  cat.validate();
  return cat;
}

FeatureVector context_features(const Catalog& catalog, std::size_t user, std::size_t ad) {
  if (user >= catalog.users()) throw LookupError("user index " + std::to_string(user) + " out of range");
  if (ad >= catalog.ads()) throw LookupError("ad index " + std::to_string(ad) + " out of range");
  const auto u = catalog.user_features.row(user);
  const auto a = catalog.ad_features.row(ad);
  FeatureVector out(u.begin(), u.end());
  out.insert(out.end(), a.begin(), a.end());
  return out;
}

ContextBatch user_contexts(const Catalog& catalog, std::size_t user, std::span<const std::size_t> ads) {
  if (user >= catalog.users()) throw LookupError("user index " + std::to_string(user) + " out of range");
  ContextBatch batch;
  batch.shared = catalog.user_features.row(user);
  batch.rows.reserve(ads.size());
  for (auto a : ads) {
    if (a >= catalog.ads()) throw LookupError("ad index " + std::to_string(a) + " out of range");
    batch.rows.push_back(catalog.ad_features.row(a));
  }
  return batch;
}

double random_policy_ctr(const Catalog& catalog) {
  double clicks = 0.0, cells = 0.0;
  for (std::size_t u = 0; u < catalog.users(); ++u)
    for (std::size_t a = 0; a < catalog.ads(); ++a) {
      if (catalog.is_holdout(u, a)) continue;
      clicks += catalog.label(u, a);
      cells += 1.0;
    }
  if (cells == 0.0) throw UsageError("catalog has no servable cells");
  return clicks / cells;
}

std::vector<std::size_t> oracle_slate(const Catalog& catalog, std::size_t user, std::span<const std::size_t> eligible,
                                      std::size_t slate_size) {
  std::vector<std::size_t> ids(eligible.begin(), eligible.end());
  const std::size_t k = std::min(slate_size, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double ta = catalog.truth(user, a), tb = catalog.truth(user, b);
                      return ta != tb ? ta > tb : a < b;
                    });
  ids.resize(k);
  return ids;
}

// ---------------------------------------------------------------------------

Environment::Environment(std::shared_ptr<const Catalog> catalog, EnvOptions options, std::uint64_t seed)
    : catalog_(std::move(catalog)),
      options_(options),
      shown_(catalog_->users() * catalog_->ads(), 0),
      rng_(derive_seed(seed, Stream::environment, 2)) {
  if (options_.label_mode == LabelMode::resample && !catalog_->truth_ctr)
    throw ConfigError("resampled labels need a catalog with ground-truth CTRs");
}

std::vector<std::size_t> Environment::eligible_ads(std::size_t user) const {
  const auto& cat = *catalog_;
  if (user >= cat.users()) throw LookupError("user index " + std::to_string(user) + " out of range");
  std::vector<std::size_t> out;
  out.reserve(cat.ads());
  for (std::size_t a = 0; a < cat.ads(); ++a) {
    if (cat.is_holdout(user, a)) continue;
    if (options_.exclude_shown && shown_[cat.cell(user, a)]) continue;
    out.push_back(a);
  }
  return out;
}

std::vector<std::uint8_t> Environment::step(std::size_t user, std::span<const std::size_t> slate) {
  const auto& cat = *catalog_;
  if (user >= cat.users()) throw LookupError("user index " + std::to_string(user) + " out of range");
  for (std::size_t i = 0; i < slate.size(); ++i) {
    const std::size_t a = slate[i];
    if (a >= cat.ads()) throw ContractViolation("slate contains unknown ad index " + std::to_string(a));
    if (cat.is_holdout(user, a))
      throw ContractViolation("ad '" + cat.ad_ids[a] + "' is held out for user '" + cat.user_ids[user] + "'");
    if (options_.exclude_shown && shown_[cat.cell(user, a)])
      throw ContractViolation("ad '" + cat.ad_ids[a] + "' was already shown to user '" + cat.user_ids[user] + "'");
    if (std::find(slate.begin(), slate.begin() + static_cast<std::ptrdiff_t>(i), a) !=
        slate.begin() + static_cast<std::ptrdiff_t>(i))
      throw ContractViolation("slate repeats ad '" + cat.ad_ids[a] + "'");
  }
  std::vector<std::uint8_t> labels;
  labels.reserve(slate.size());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (auto a : slate) {
    if (options_.label_mode == LabelMode::frozen)
      labels.push_back(cat.label(user, a));
    else
      labels.push_back(u01(rng_) < cat.truth(user, a) ? 1 : 0);
    shown_[cat.cell(user, a)] = 1;
  }
  ++round_;
  return labels;
}

std::size_t Environment::shown_count(std::size_t user) const {
  const auto& cat = *catalog_;
  return static_cast<std::size_t>(std::count(shown_.begin() + static_cast<std::ptrdiff_t>(cat.cell(user, 0)),
                                             shown_.begin() + static_cast<std::ptrdiff_t>(cat.cell(user, 0) + cat.ads()),
                                             std::uint8_t{1}));
}

}  // namespace bsim
