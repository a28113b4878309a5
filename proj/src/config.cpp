#include "bsim/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "bsim/error.hpp"
#include "bsim/rng.hpp"

namespace bsim {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string to_string(LabelMode m) { return m == LabelMode::frozen ? "frozen" : "resample"; }
std::string to_string(OptimizerKind k) { return k == OptimizerKind::rmsprop ? "rmsprop" : "sgd"; }
std::string to_string(DecayReading r) { return r == DecayReading::moving_average ? "moving_average" : "lr_schedule"; }

template <class Enum>
std::optional<Enum> parse_enum(const std::string& s, std::initializer_list<Enum> values) {
  for (auto v : values)
    if (to_string(v) == s) return v;
  return std::nullopt;
}

bool nonnegative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Walks a JSON document, recording every problem instead of stopping at the first.
class Reader {
 public:
  std::vector<std::string> errors;

  // Returns the object at parent[key], or nullptr when absent or not an object.
  const json* object(const json& parent, const std::string& path, const char* key,
                     std::initializer_list<const char*> known) {
    const auto it = parent.find(key);
    if (it == parent.end() || it->is_null()) return nullptr;
    const std::string here = join(path, key);
    if (!it->is_object()) {
      errors.push_back(here + ": expected an object");
      return nullptr;
    }
    unknown_keys(*it, here, known);
    return &*it;
  }

  void unknown_keys(const json& obj, const std::string& path, std::initializer_list<const char*> known) {
    for (const auto& [k, v] : obj.items())
      if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
        errors.push_back(join(path, k) + ": unknown key");
  }

  template <class T>
  void field(const json* obj, const std::string& path, const char* key, T& out) {
    if (!obj) return;
    const auto it = obj->find(key);
    if (it == obj->end()) return;
    const std::string here = join(path, key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) return bad(here, "a boolean");
      out = it->get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) return bad(here, "a string");
      out = it->get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) return bad(here, "a number");
      out = it->get<double>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!it->is_number_integer()) return bad(here, "an integer");
      out = it->get<int>();
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!it->is_array()) return bad(here, "an array of positive integers");
      std::vector<std::size_t> v;
      for (const auto& e : *it) {
        if (!nonnegative_integer(e)) return bad(here, "an array of positive integers");
        v.push_back(e.get<std::size_t>());
      }
      out = std::move(v);
    } else {
      static_assert(std::is_unsigned_v<T>);
      if (!nonnegative_integer(*it)) return bad(here, "a nonnegative integer");
      out = it->get<T>();
    }
  }

  template <class Enum>
  void choice(const json* obj, const std::string& path, const char* key, Enum& out,
              std::initializer_list<Enum> values) {
    std::string name;
    const auto before = errors.size();
    field(obj, path, key, name);
    if (name.empty() || errors.size() != before) return;
    if (auto v = parse_enum(name, values)) {
      out = *v;
      return;
    }
    std::string allowed;
    for (auto v : values) allowed += (allowed.empty() ? "" : ", ") + std::string(to_string(v));
    errors.push_back(join(path, key) + ": '" + name + "' is not one of " + allowed);
  }

 private:
  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  void bad(const std::string& where, const char* what) { errors.push_back(where + ": expected " + what); }
};

constexpr std::initializer_list<SamplerKind> kSamplerKinds{SamplerKind::bootstrap,     SamplerKind::multihead,
                                                           SamplerKind::sgd_ensemble,  SamplerKind::multihead_sgd,
                                                           SamplerKind::mc_dropout,    SamplerKind::hybrid};
constexpr std::initializer_list<PolicyKind> kPolicyKinds{PolicyKind::random, PolicyKind::greedy,
                                                         PolicyKind::epsilon_greedy, PolicyKind::thompson,
                                                         PolicyKind::ucb};

std::string family_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::bootstrap: return "Bootstrap";
    case SamplerKind::multihead: return "Multihead";
    case SamplerKind::sgd_ensemble: return "SGD";
    case SamplerKind::multihead_sgd: return "Multihead SGD";
    case SamplerKind::mc_dropout: return "Dropout";
    case SamplerKind::hybrid: return "Hybrid";
  }
  return "?";
}

}  // namespace

std::string to_string(BufferMode mode) { return mode == BufferMode::window ? "window" : "cumulative"; }
std::string to_string(UserOrder order) {
  return order == UserOrder::round_robin_shuffled ? "round_robin_shuffled" : "uniform_random";
}

ordered_json to_json(const ExperimentConfig& c) {
  const auto& e = c.environment;
  const auto& s = e.synth;
  ordered_json env;
  env["catalog"] = e.catalog ? ordered_json{{"users", e.catalog->users.string()},
                                            {"ads", e.catalog->ads.string()},
                                            {"labels", e.catalog->labels.string()}}
                             : ordered_json(nullptr);
  env["synth"] = {{"users", s.users},
                  {"ads", s.ads},
                  {"user_dim", s.user_dim},
                  {"ad_dim", s.ad_dim},
                  {"user_numeric", s.user_numeric},
                  {"ad_numeric", s.ad_numeric},
                  {"category_width", s.category_width},
                  {"truth_hidden", s.truth_hidden},
                  {"logit_scale", s.logit_scale},
                  {"base_rate", s.base_rate},
                  {"zero_truth", s.zero_truth},
                  {"seed", s.seed}};
  env["holdout_per_user"] = e.holdout_per_user;
  env["rating_threshold"] = e.rating_threshold;
  env["exclude_shown"] = e.exclude_shown;
  env["label_mode"] = to_string(e.label_mode);

  ordered_json doc;
  doc["name"] = c.name;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir;
  doc["environment"] = env;
  doc["sampler"] = {{"kind", std::string(to_string(c.sampler.kind))},
                    {"members", c.sampler.members},
                    {"p_keep", c.sampler.p_keep},
                    {"hidden", c.sampler.hidden},
                    {"hybrid_units", c.sampler.hybrid_units},
                    {"dropout_rate", c.sampler.dropout_rate},
                    {"shared_mask", c.sampler.shared_mask}};
  doc["policy"] = {{"kind", std::string(to_string(c.policy.kind))},
                   {"epsilon", c.policy.epsilon},
                   {"ucb_order_k", c.policy.ucb_order_k},
                   {"samples", c.policy.samples}};
  doc["loop"] = {{"bootstrap_users", c.loop.bootstrap_users}, {"retrain_every", c.loop.retrain_every},
                 {"slate_size", c.loop.slate_size},           {"epochs", c.loop.epochs},
                 {"batch_size", c.loop.batch_size},           {"buffer_mode", to_string(c.loop.buffer_mode)},
                 {"user_order", to_string(c.loop.user_order)}, {"total_visits", c.loop.total_visits}};
  doc["optimizer"] = {{"kind", to_string(c.optimizer.kind)},
                      {"learning_rate", c.optimizer.learning_rate},
                      {"decay", c.optimizer.decay},
                      {"epsilon", c.optimizer.epsilon},
                      {"decay_reading", c.optimizer.decay_reading ? ordered_json(to_string(*c.optimizer.decay_reading))
                                                                  : ordered_json(nullptr)}};
  doc["warm_start"] = {{"enabled", c.warm_start.enabled},
                       {"collect_users", c.warm_start.collect_users},
                       {"epochs", c.warm_start.epochs}};
  return doc;
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  Reader r;
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object at the top level");
  r.unknown_keys(doc, "", {"name", "seed", "output_dir", "environment", "sampler", "policy", "loop", "optimizer",
                           "warm_start"});
  r.field(&doc, "", "name", c.name);
  r.field(&doc, "", "seed", c.seed);
  r.field(&doc, "", "output_dir", c.output_dir);

  auto& e = c.environment;
  if (const json* env = r.object(doc, "", "environment",
                                 {"catalog", "synth", "holdout_per_user", "rating_threshold", "exclude_shown",
                                  "label_mode"})) {
    if (const json* cat = r.object(*env, "environment", "catalog", {"users", "ads", "labels"})) {
      std::string u, a, l;
      r.field(cat, "environment.catalog", "users", u);
      r.field(cat, "environment.catalog", "ads", a);
      r.field(cat, "environment.catalog", "labels", l);
      e.catalog = CatalogPaths{u, a, l};
    }
    const std::string sp = "environment.synth";
    if (const json* s = r.object(*env, "environment", "synth",
                                 {"users", "ads", "user_dim", "ad_dim", "user_numeric", "ad_numeric", "category_width",
                                  "truth_hidden", "logit_scale", "base_rate", "zero_truth", "seed"})) {
      r.field(s, sp, "users", e.synth.users);
      r.field(s, sp, "ads", e.synth.ads);
      r.field(s, sp, "user_dim", e.synth.user_dim);
      r.field(s, sp, "ad_dim", e.synth.ad_dim);
      r.field(s, sp, "user_numeric", e.synth.user_numeric);
      r.field(s, sp, "ad_numeric", e.synth.ad_numeric);
      r.field(s, sp, "category_width", e.synth.category_width);
      r.field(s, sp, "truth_hidden", e.synth.truth_hidden);
      r.field(s, sp, "logit_scale", e.synth.logit_scale);
      r.field(s, sp, "base_rate", e.synth.base_rate);
      r.field(s, sp, "zero_truth", e.synth.zero_truth);
      r.field(s, sp, "seed", e.synth.seed);
    }
    r.field(env, "environment", "holdout_per_user", e.holdout_per_user);
    r.field(env, "environment", "rating_threshold", e.rating_threshold);
    r.field(env, "environment", "exclude_shown", e.exclude_shown);
    r.choice(env, "environment", "label_mode", e.label_mode, {LabelMode::frozen, LabelMode::resample});
  }

  if (const json* s = r.object(doc, "", "sampler",
                               {"kind", "members", "p_keep", "hidden", "hybrid_units", "dropout_rate",
                                "shared_mask"})) {
    r.choice(s, "sampler", "kind", c.sampler.kind, kSamplerKinds);
    r.field(s, "sampler", "members", c.sampler.members);
    r.field(s, "sampler", "p_keep", c.sampler.p_keep);
    r.field(s, "sampler", "hidden", c.sampler.hidden);
    r.field(s, "sampler", "hybrid_units", c.sampler.hybrid_units);
    r.field(s, "sampler", "dropout_rate", c.sampler.dropout_rate);
    r.field(s, "sampler", "shared_mask", c.sampler.shared_mask);
  }

  if (const json* p = r.object(doc, "", "policy", {"kind", "epsilon", "ucb_order_k", "samples"})) {
    r.choice(p, "policy", "kind", c.policy.kind, kPolicyKinds);
    r.field(p, "policy", "epsilon", c.policy.epsilon);
    r.field(p, "policy", "ucb_order_k", c.policy.ucb_order_k);
    r.field(p, "policy", "samples", c.policy.samples);
  }

  if (const json* l = r.object(doc, "", "loop",
                               {"bootstrap_users", "retrain_every", "slate_size", "epochs", "batch_size",
                                "buffer_mode", "user_order", "total_visits"})) {
    r.field(l, "loop", "bootstrap_users", c.loop.bootstrap_users);
    r.field(l, "loop", "retrain_every", c.loop.retrain_every);
    r.field(l, "loop", "slate_size", c.loop.slate_size);
    r.field(l, "loop", "epochs", c.loop.epochs);
    r.field(l, "loop", "batch_size", c.loop.batch_size);
    r.choice(l, "loop", "buffer_mode", c.loop.buffer_mode, {BufferMode::window, BufferMode::cumulative});
    r.choice(l, "loop", "user_order", c.loop.user_order,
             {UserOrder::round_robin_shuffled, UserOrder::uniform_random});
    r.field(l, "loop", "total_visits", c.loop.total_visits);
  }

  if (const json* o = r.object(doc, "", "optimizer", {"kind", "learning_rate", "decay", "epsilon", "decay_reading"})) {
    r.choice(o, "optimizer", "kind", c.optimizer.kind, {OptimizerKind::rmsprop, OptimizerKind::sgd});
    r.field(o, "optimizer", "learning_rate", c.optimizer.learning_rate);
    r.field(o, "optimizer", "decay", c.optimizer.decay);
    r.field(o, "optimizer", "epsilon", c.optimizer.epsilon);
    if (o->contains("decay_reading") && !o->at("decay_reading").is_null()) {
      DecayReading reading = DecayReading::moving_average;
      r.choice(o, "optimizer", "decay_reading", reading, {DecayReading::moving_average, DecayReading::lr_schedule});
      c.optimizer.decay_reading = reading;
    }
  }

  if (const json* w = r.object(doc, "", "warm_start", {"enabled", "collect_users", "epochs"})) {
    r.field(w, "warm_start", "enabled", c.warm_start.enabled);
    r.field(w, "warm_start", "collect_users", c.warm_start.collect_users);
    r.field(w, "warm_start", "epochs", c.warm_start.epochs);
  }

  c.policy.slate_size = c.loop.slate_size;
  auto errors = std::move(r.errors);
  if (errors.empty()) errors = validation_errors(c);
  if (!errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return c;
}

std::vector<std::string> validation_errors(const ExperimentConfig& c) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, std::string msg) {
    if (!ok) errs.push_back(std::move(msg));
  };
  const auto& e = c.environment;
  if (e.catalog) {
    need(!e.catalog->users.empty(), "environment.catalog.users: path is empty");
    need(!e.catalog->ads.empty(), "environment.catalog.ads: path is empty");
    need(!e.catalog->labels.empty(), "environment.catalog.labels: path is empty");
  } else {
    try {
      e.synth.validate();
    } catch (const ConfigError& err) {
      errs.push_back(std::string("environment.synth: ") + err.what());
    }
    need(e.holdout_per_user < e.synth.ads, "environment.holdout_per_user: must be smaller than the ad count");
    if (e.holdout_per_user < e.synth.ads)
      need(c.loop.slate_size <= e.synth.ads - e.holdout_per_user,
           "loop.slate_size: larger than the ads left after the holdout");
  }
  if (e.label_mode == LabelMode::resample && e.catalog)
    errs.push_back("environment.label_mode: resample needs a synthetic catalog");

  const auto& s = c.sampler;
  need(s.members >= 1, "sampler.members: must be at least 1");
  need(s.p_keep > 0.0 && s.p_keep <= 1.0, "sampler.p_keep: must lie in (0, 1]");
  need(std::all_of(s.hidden.begin(), s.hidden.end(), [](auto w) { return w >= 1; }),
       "sampler.hidden: every layer width must be at least 1");
  const bool dropout = is_dropout_kind(s.kind);
  if (dropout) need(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0, "sampler.dropout_rate: must lie in [0, 1)");
  if (s.kind == SamplerKind::hybrid) {
    need(s.dropout_rate > 0.0, "sampler.dropout_rate: the hybrid sampler needs a positive dropout rate");
    need(s.hybrid_units >= 1, "sampler.hybrid_units: must be at least 1");
  }
  if (s.kind == SamplerKind::mc_dropout) need(!s.hidden.empty(), "sampler.hidden: dropout needs a hidden layer");
  if (errs.empty()) {
    try {
      make_sampler_config(s, 1, 0).validate();
    } catch (const ConfigError& err) {
      errs.push_back(std::string("sampler: ") + err.what());
    }
  }

  const auto& p = c.policy;
  need(p.epsilon >= 0.0 && p.epsilon <= 1.0, "policy.epsilon: must lie in [0, 1]");
  need(p.samples >= 1, "policy.samples: must be at least 1");
  if (p.kind == PolicyKind::thompson) need(p.samples == 1, "policy.samples: thompson sampling draws exactly 1 sample");
  if (p.kind == PolicyKind::ucb)
    need(p.ucb_order_k >= 1 && p.ucb_order_k <= p.samples, "policy.ucb_order_k: must lie in [1, policy.samples]");
  if (uses_samples(p.kind) && is_ensemble_kind(s.kind))
    need(p.samples <= s.members, "policy.samples: exceeds sampler.members for an ensemble sampler");

  const auto& l = c.loop;
  need(l.slate_size >= 1, "loop.slate_size: must be at least 1");
  need(l.retrain_every >= 1, "loop.retrain_every: must be at least 1");
  need(l.epochs >= 1, "loop.epochs: must be at least 1");
  need(l.batch_size >= 1, "loop.batch_size: must be at least 1");
  need(l.total_visits >= 1, "loop.total_visits: must be at least 1");
  if (!c.warm_start.enabled) {
    need(l.bootstrap_users >= 1, "loop.bootstrap_users: must be at least 1");
    need(l.bootstrap_users <= l.total_visits, "loop.bootstrap_users: exceeds loop.total_visits");
  }

  const auto& o = c.optimizer;
  need(std::isfinite(o.learning_rate) && o.learning_rate > 0.0, "optimizer.learning_rate: must be positive");
  need(std::isfinite(o.decay) && o.decay >= 0.0, "optimizer.decay: must be nonnegative");
  need(std::isfinite(o.epsilon) && o.epsilon > 0.0, "optimizer.epsilon: must be positive");
  if (o.effective_reading() == DecayReading::moving_average)
    need(o.decay < 1.0, "optimizer.decay: a moving-average coefficient must be below 1");

  if (c.warm_start.enabled) need(c.warm_start.collect_users >= 1, "warm_start.collect_users: must be at least 1");
  return errs;
}

void validate(const ExperimentConfig& config) {
  const auto errs = validation_errors(config);
  if (errs.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& e : errs) msg += "\n  " + e;
  throw ConfigError(msg);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void apply_override(json& doc, const std::string& dotted_key, const json& value) {
  json* node = &doc;
  std::stringstream ss(dotted_key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("empty override key");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ConfigError("override key '" + dotted_key + "' does not exist in the config");
    node = &(*node)[parts[i]];
  }
  *node = value;
}

std::string model_label(const ExperimentConfig& c) {
  if (!c.name.empty()) return c.name;
  std::string label;
  const bool plain = c.sampler.kind == SamplerKind::sgd_ensemble && c.sampler.members == 1;
  switch (c.policy.kind) {
    case PolicyKind::random: label = "Random"; break;
    case PolicyKind::greedy: label = plain ? "Greedy" : family_name(c.sampler.kind) + " Greedy"; break;
    case PolicyKind::epsilon_greedy:
      label = plain ? "ϵ-greedy" : family_name(c.sampler.kind) + " ϵ-greedy";
      break;
    case PolicyKind::thompson: label = family_name(c.sampler.kind) + " TS"; break;
    case PolicyKind::ucb: label = family_name(c.sampler.kind) + " UCB"; break;
  }
  if (c.warm_start.enabled) label += " (" + std::to_string(c.warm_start.epochs) + ")";
  return label;
}

ExperimentConfig apply_patch(const ExperimentConfig& base, const json& patch) {
  json doc = json::parse(to_json(base).dump());
  doc.merge_patch(patch);
  return config_from_json(doc);
}

ExperimentConfig sweep_run_config(const ExperimentConfig& cell_config, std::uint64_t master, std::size_t cell,
                                  std::uint64_t seed_value) {
  ExperimentConfig c = cell_config;
  c.environment.synth.seed = derive_seed(master, Stream::environment, seed_value);
  c.seed = derive_seed(master, Stream::sweep, cell, seed_value);
  return c;
}

std::vector<SweepCell> table1_cells() {
  auto row = [](std::string label, const char* policy, const char* sampler, std::size_t members, std::size_t samples) {
    json patch = {{"name", label},
                  {"policy", {{"kind", policy}, {"samples", samples}}},
                  {"sampler", {{"kind", sampler}, {"members", members}}}};
    return SweepCell{std::move(label), std::move(patch)};
  };
  return {
      row("Random", "random", "sgd_ensemble", 1, 1),
      row("Greedy", "greedy", "sgd_ensemble", 1, 1),
      row("ϵ-greedy", "epsilon_greedy", "sgd_ensemble", 1, 1),
      row("Dropout TS", "thompson", "mc_dropout", 10, 1),
      row("Dropout UCB", "ucb", "mc_dropout", 10, 10),
      row("Bootstrap TS", "thompson", "bootstrap", 10, 1),
      row("Bootstrap UCB", "ucb", "bootstrap", 10, 10),
      row("SGD UCB", "ucb", "sgd_ensemble", 10, 10),
      row("Multihead UCB", "ucb", "multihead", 10, 10),
      row("Multihead SGD UCB", "ucb", "multihead_sgd", 10, 10),
      row("Hybrid TS", "thompson", "hybrid", 10, 1),
      row("Hybrid UCB", "ucb", "hybrid", 10, 10),
  };
}

std::vector<SweepCell> table2_cells() {
  std::vector<SweepCell> cells;
  json eps = {{"name", "ϵ-greedy (100)"},
              {"policy", {{"kind", "epsilon_greedy"}, {"samples", 1}}},
              {"sampler", {{"kind", "sgd_ensemble"}, {"members", 1}}},
              {"warm_start", {{"enabled", true}, {"epochs", 100}}}};
  cells.push_back({"ϵ-greedy (100)", eps});
  for (int epochs : {100, 200, 500}) {
    const std::string label = "Hybrid (" + std::to_string(epochs) + ")";
    json h = {{"name", label},
              {"policy", {{"kind", "ucb"}, {"samples", 10}}},
              {"sampler", {{"kind", "hybrid"}, {"members", 10}}},
              {"warm_start", {{"enabled", true}, {"epochs", epochs}}}};
    cells.push_back({label, h});
  }
  return cells;
}

}  // namespace bsim
