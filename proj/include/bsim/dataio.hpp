#pragma once

// Persistence: catalog CSV files, network and sampler checkpoints, the
// impression log, run reports and the run manifest.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bsim/config.hpp"
#include "bsim/env.hpp"
#include "bsim/impression.hpp"
#include "bsim/metrics.hpp"
#include "bsim/nncore.hpp"
#include "bsim/posterior.hpp"

namespace bsim {

// --- CSV -------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // each the width of the header
};

/// Comma-separated, first row header, double-quoted fields allowed.
CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

/// users.csv, ads.csv, labels.csv (ratings 5 for clicks, 1 otherwise) and,
/// for synthetic catalogs, truth.csv with the ground-truth CTRs.
void write_catalog(const Catalog& catalog, const std::filesystem::path& dir);

// --- checkpoints -------------------------------------------------------------

inline constexpr std::string_view kNetworkMagic = "BSIM1";
inline constexpr std::string_view kSamplerMagic = "BSMP1";

std::string encode_network(const NetworkParams& params);
NetworkParams decode_network(std::string_view bytes);

std::string encode_sampler(const Sampler& sampler);
Sampler decode_sampler(std::string_view bytes);

void save_checkpoint(const Sampler& sampler, const std::filesystem::path& path);
Sampler load_checkpoint(const std::filesystem::path& path);

void save_network(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_network(const std::filesystem::path& path);

// --- impression log ----------------------------------------------------------

/// One JSON object per line, fields in declaration order.
std::string encode_impression(const Impression& imp);
Impression decode_impression(std::string_view line, std::size_t line_number);

void write_impressions(std::span<const Impression> log, const std::filesystem::path& path);
/// Throws ParseError naming the line on malformed records and IntegrityError
/// when impression ids are not strictly increasing.
std::vector<Impression> read_impressions(const std::filesystem::path& path);

/// Append-only writer; flush() pushes buffered lines to disk.
class ImpressionWriter {
 public:
  explicit ImpressionWriter(const std::filesystem::path& path);
  void append(std::span<const Impression> records);
  void flush();

 private:
  std::ofstream out_;
  std::uint64_t last_id_ = 0;
  bool any_ = false;
};

// --- digests, reports, run directories ---------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// SHA-256 of the key-sorted, whitespace-free JSON rendering.
std::string canonical_config_digest(const nlohmann::json& doc);
std::string canonical_config_digest(const ExperimentConfig& config);

nlohmann::ordered_json report_to_json(const MetricsReport& report);
void write_report(const MetricsReport& report, const std::filesystem::path& path);
/// `round,cumulative_ctr,regret`; the regret column is empty without ground truth.
void write_series(const MetricsReport& report, const std::filesystem::path& path);

/// Creates `dir`. An existing non-empty directory is an IoError unless `force`,
/// in which case it is removed first.
void prepare_output_dir(const std::filesystem::path& dir, bool force);

/// manifest.json listing every other file under `dir` with size and SHA-256.
void write_manifest(const std::filesystem::path& dir);
/// Throws IntegrityError when a listed file is missing or differs.
void verify_manifest(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bsim
