// bsim: generate catalogs, run self-training experiments and sweeps, and
// evaluate checkpoints.

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "bsim/config.hpp"
#include "bsim/dataio.hpp"
#include "bsim/error.hpp"
#include "bsim/loop.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailure = 1;
constexpr int kExitConfig = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool dry_run = false;
  int jobs = 1;
};

void setup_logging() {
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("BSIM_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string fixed(const std::optional<double>& v, int digits) { return v ? fixed(*v, digits) : "n/a"; }

// Pads by code points so labels like "ϵ-greedy" line up.
std::string pad(const std::string& s, std::size_t width) {
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

void print_row(const MetricsReport& r) {
  std::cout << pad("model", 22) << pad("CTR(+%)", 10) << "PR-AUC\n";
  std::cout << pad(r.model, 22) << pad(fixed(r.ctr_uplift_pct, 2), 10) << fixed(r.test_pr_auc, 4) << "\n";
}

ExperimentConfig resolve(const std::string& path, const Globals& g) {
  ExperimentConfig cfg = load_config(path);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  return cfg;
}

// --- generate -------------------------------------------------------------------

int cmd_generate(const Globals& g, SynthSpec spec) {
  if (g.out.empty()) throw ConfigError("generate needs --out");
  spec.seed = g.seed.value_or(0);
  spec.validate();
  if (g.dry_run) {
    std::cout << "would write a " << spec.users << "x" << spec.ads << " catalog to " << g.out << "\n";
    return kExitOk;
  }
  prepare_output_dir(g.out, g.force);
  const Catalog cat = synth_generate(spec);
  write_catalog(cat, g.out);
  ExperimentConfig c;
  c.environment.synth = spec;
  write_file(fs::path(g.out) / "synth.json", to_json(c)["environment"]["synth"].dump(2) + "\n");
  write_manifest(g.out);
  spdlog::info("wrote {}x{} catalog ({} + {} features) to {}", cat.users(), cat.ads(), cat.user_features.cols,
               cat.ad_features.cols, g.out);
  return kExitOk;
}

// --- simulate -------------------------------------------------------------------

int cmd_simulate(const Globals& g, const std::string& config_path) {
  const ExperimentConfig cfg = resolve(config_path, g);
  const std::string digest = canonical_config_digest(cfg);
  if (g.dry_run) {
    std::cout << "config OK: " << model_label(cfg) << ", digest " << digest << "\n";
    return kExitOk;
  }
  if (cfg.output_dir.empty()) throw ConfigError("simulate needs --out or output_dir in the config");
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir, g.force);
  write_file(dir / "config.json", to_json(cfg).dump(2) + "\n");

  ImpressionWriter writer(dir / "impressions.jsonl");
  RunHooks hooks;
  hooks.on_flush = [&](std::span<const Impression> fresh) {
    writer.append(fresh);
    writer.flush();
  };
  hooks.on_retrain = [&](std::uint64_t, std::uint64_t round, const Sampler& s) {
    save_checkpoint(s, dir / "checkpoints" / ("round_" + std::to_string(round)) / "sampler.bsmp");
  };
  const RunResult result = run_experiment(cfg, hooks);
  save_checkpoint(*result.sampler, dir / "final.bsmp");
  write_report(result.report, dir / "report.json");
  write_series(result.report, dir / "series.csv");
  write_manifest(dir);
  print_row(result.report);
  return kExitOk;
}

// --- sweep ------------------------------------------------------------------------

struct Axis {
  std::string key;
  std::vector<json> values;
};

Axis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=v1,v2,... (got '" + spec + "')");
  Axis a{spec.substr(0, eq), {}};
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      a.values.push_back(json::parse(item));
    } catch (const json::parse_error&) {
      a.values.push_back(item);
    }
  }
  if (a.values.empty()) throw ConfigError("--set " + a.key + " has no values");
  return a;
}

json patch_for(const std::string& dotted, const json& value) {
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(dotted);
  std::string p;
  while (std::getline(ss, p, '.')) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  return patch;
}

std::vector<SweepCell> grid_cells(const std::vector<Axis>& axes, const json& base_doc) {
  std::vector<SweepCell> cells{{"", json::object()}};
  for (const auto& axis : axes) {
    json probe = base_doc;
    apply_override(probe, axis.key, axis.values.front());  // rejects unknown keys
    std::vector<SweepCell> next;
    for (const auto& c : cells)
      for (const auto& v : axis.values) {
        json patch = c.patch;
        patch.merge_patch(patch_for(axis.key, v));
        const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
        next.push_back({c.label + (c.label.empty() ? "" : " ") + axis.key + "=" + text, patch});
      }
    cells = std::move(next);
  }
  return cells;
}

struct Stat {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

Stat stats(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

int cmd_sweep(const Globals& g, const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& preset, std::vector<std::uint64_t> seeds) {
  ExperimentConfig base = resolve(config_path, g);
  const std::uint64_t master = base.seed;
  if (seeds.empty()) seeds = {0};
  const json base_doc = json::parse(to_json(base).dump());

  std::vector<SweepCell> cells;
  if (!preset.empty()) {
    if (preset == "table1")
      cells = table1_cells();
    else if (preset == "table2")
      cells = table2_cells();
    else
      throw ConfigError("unknown preset '" + preset + "' (table1, table2)");
  }
  std::vector<Axis> axes;
  for (const auto& s : sets) axes.push_back(parse_axis(s));
  const auto grid = grid_cells(axes, base_doc);
  if (cells.empty()) {
    cells = grid;
  } else if (!axes.empty()) {
    std::vector<SweepCell> crossed;
    for (const auto& c : cells)
      for (const auto& gcell : grid) {
        json patch = c.patch;
        patch.merge_patch(gcell.patch);
        crossed.push_back({c.label + " " + gcell.label, patch});
      }
    cells = std::move(crossed);
  }

  std::vector<ExperimentConfig> cell_configs;
  for (auto& c : cells) {
    cell_configs.push_back(apply_patch(base, c.patch));
    if (c.label.empty()) c.label = model_label(cell_configs.back());
  }
  if (g.dry_run) {
    std::cout << "config OK: " << cells.size() << " cells x " << seeds.size() << " seeds\n";
    return kExitOk;
  }
  if (base.output_dir.empty()) throw ConfigError("sweep needs --out or output_dir in the config");
  const fs::path dir = base.output_dir;
  prepare_output_dir(dir, g.force);

  struct Job {
    std::size_t cell;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({c, s});
  std::vector<std::optional<MetricsReport>> reports(jobs.size());
  std::vector<std::string> failures(jobs.size());

#pragma omp parallel for schedule(dynamic) num_threads(g.jobs)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto [c, s] = jobs[j];
    const ExperimentConfig cfg = sweep_run_config(cell_configs[c], master, c, seeds[s]);
    const bool repeated = std::count(seeds.begin(), seeds.end(), seeds[s]) > 1;
    const fs::path run_dir = dir / ("cell_" + std::to_string(c)) /
                             ("seed_" + std::to_string(seeds[s]) + (repeated ? "_" + std::to_string(s) : ""));
    try {
      fs::create_directories(run_dir);
      write_file(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
      const RunResult r = run_experiment(cfg);
      write_report(r.report, run_dir / "report.json");
      write_series(r.report, run_dir / "series.csv");
      reports[j] = r.report;
      spdlog::info("{} seed {}: CTR {:+.2f}%", cells[c].label, seeds[s], r.report.ctr_uplift_pct);
    } catch (const std::exception& e) {
      failures[j] = e.what();
      spdlog::error("{} seed {} failed: {}", cells[c].label, seeds[s], e.what());
    }
  }

  CsvTable csv{{"model", "runs", "failures", "ctr_uplift_mean", "ctr_uplift_sd", "cumulative_ctr_mean",
                "cumulative_ctr_sd", "test_pr_auc_mean", "test_pr_auc_sd", "train_pr_auc_mean", "train_pr_auc_sd"},
               {}};
  std::ostringstream text;
  text << pad("model", 24) << pad("CTR(+%)", 20) << pad("PR-AUC", 20) << "runs\n";
  std::size_t failed = 0;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<double> uplift, ctr, test, train;
    std::size_t fails = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].cell != c) continue;
      if (!reports[j]) {
        ++fails;
        continue;
      }
      uplift.push_back(reports[j]->ctr_uplift_pct);
      ctr.push_back(reports[j]->cumulative_ctr);
      if (reports[j]->test_pr_auc) test.push_back(*reports[j]->test_pr_auc);
      if (reports[j]->train_pr_auc) train.push_back(*reports[j]->train_pr_auc);
    }
    failed += fails;
    const Stat su = stats(uplift), sc = stats(ctr), st = stats(test), sr = stats(train);
    csv.rows.push_back({cells[c].label, std::to_string(su.n), std::to_string(fails), fixed(su.mean, 6),
                        fixed(su.sd, 6), fixed(sc.mean, 6), fixed(sc.sd, 6), fixed(st.mean, 6), fixed(st.sd, 6),
                        fixed(sr.mean, 6), fixed(sr.sd, 6)});
    text << pad(cells[c].label, 24) << pad(fixed(su.mean, 2) + " ± " + fixed(su.sd, 2), 20)
         << pad(fixed(st.mean, 4) + " ± " + fixed(st.sd, 4), 20) << su.n << (fails ? " (failed " : "")
         << (fails ? std::to_string(fails) + ")" : "") << "\n";
  }
  write_csv(dir / "summary.csv", csv);
  write_file(dir / "summary.txt", text.str());
  write_manifest(dir);
  std::cout << text.str();
  if (failed) {
    spdlog::error("{} of {} runs failed", failed, jobs.size());
    return kExitRunFailure;
  }
  return kExitOk;
}

// --- evaluate ---------------------------------------------------------------------

int cmd_evaluate(const Globals& g, const std::string& checkpoint, const std::string& config_path,
                 const std::string& catalog_dir, const std::string& split) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = resolve(config_path, g);
  if (!catalog_dir.empty())
    cfg.environment.catalog = CatalogPaths{fs::path(catalog_dir) / "users.csv", fs::path(catalog_dir) / "ads.csv",
                                           fs::path(catalog_dir) / "labels.csv"};
  if (split != "holdout" && split != "all") throw ConfigError("--split must be 'holdout' or 'all'");
  if (g.dry_run) {
    std::cout << "config OK\n";
    return kExitOk;
  }
  const Sampler sampler = load_checkpoint(checkpoint);
  const auto catalog = build_catalog(cfg.environment);
  const EvalMetrics m = evaluate_sampler(sampler, *catalog, split == "all");
  std::cout << pad("cells", 8) << pad("PR-AUC", 10) << pad("ROC-AUC", 10) << pad("RCE(%)", 10) << "log-loss\n";
  std::cout << pad(std::to_string(m.cells), 8) << pad(fixed(m.pr_auc, 4), 10) << pad(fixed(m.roc_auc, 4), 10)
            << pad(fixed(m.rce_pct, 3), 10) << fixed(m.log_loss, 5) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Contextual-bandit self-training simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--force", g.force, "Replace an existing output directory");
  app.add_flag("--dry-run", g.dry_run, "Validate inputs and exit");
  app.add_option("--jobs", g.jobs, "Parallel runs for sweeps")->check(CLI::PositiveNumber);

  SynthSpec spec;
  auto* gen = app.add_subcommand("generate", "Write a synthetic catalog");
  gen->add_option("--users", spec.users);
  gen->add_option("--ads", spec.ads);
  gen->add_option("--user-dim", spec.user_dim);
  gen->add_option("--ad-dim", spec.ad_dim);
  gen->add_option("--base-rate", spec.base_rate);
  gen->add_option("--logit-scale", spec.logit_scale);

  std::string config_path;
  auto* sim = app.add_subcommand("simulate", "Run one experiment");
  sim->add_option("config", config_path, "Experiment config (JSON)")->required();

  std::vector<std::string> sets;
  std::string preset;
  std::vector<std::uint64_t> seeds;
  auto* sweep = app.add_subcommand("sweep", "Run a grid of experiments over several seeds");
  sweep->add_option("config", config_path, "Base experiment config (JSON)")->required();
  sweep->add_option("--set", sets, "Override axis key=v1,v2,... (repeatable)");
  sweep->add_option("--preset", preset, "table1 or table2");
  sweep->add_option("--seeds", seeds, "Seed values")->delimiter(',');

  std::string checkpoint, catalog_dir, split = "holdout";
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on catalog cells");
  eval->add_option("checkpoint", checkpoint, "Sampler checkpoint")->required();
  eval->add_option("--config", config_path, "Config describing the environment");
  eval->add_option("--catalog", catalog_dir, "Directory with users.csv, ads.csv, labels.csv");
  eval->add_option("--split", split, "holdout or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*gen) return cmd_generate(g, spec);
    if (*sim) return cmd_simulate(g, config_path);
    if (*sweep) return cmd_sweep(g, config_path, sets, preset, seeds);
    if (*eval) return cmd_evaluate(g, checkpoint, config_path, catalog_dir, split);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRunFailure;
  }
  return kExitOk;
}
