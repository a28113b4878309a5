#include "bsim/dataio.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <sstream>

#include <boost/tokenizer.hpp>

#include "bsim/error.hpp"

namespace bsim {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class ByteWriter {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string take() { return std::move(out_); }
  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t limit) {
    const auto v = u64();
    if (v > limit) throw IntegrityError(what_ + ": implausible length " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IntegrityError(what_ + " is truncated");
  }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string sha256_raw(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  return {reinterpret_cast<const char*>(md), len};
}

std::string to_hex(std::string_view raw) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

constexpr std::size_t kDigestBytes = 32;

std::string seal(std::string body) {
  body.append(sha256_raw(body));
  return body;
}

// Checks magic and trailer; returns the body after the magic.
std::string_view unseal(std::string_view bytes, std::string_view magic, const std::string& what) {
  if (bytes.size() < magic.size()) throw IntegrityError(what + " is truncated");
  const auto head = bytes.substr(0, magic.size());
  if (head != magic) {
    if (head.substr(0, magic.size() - 1) == magic.substr(0, magic.size() - 1))
      throw VersionMismatch(what + " has version '" + std::string(head) + "', this build reads '" +
                            std::string(magic) + "'");
    throw IntegrityError(what + " does not start with '" + std::string(magic) + "'");
  }
  if (bytes.size() < magic.size() + kDigestBytes) throw IntegrityError(what + " is truncated");
  const auto body = bytes.substr(0, bytes.size() - kDigestBytes);
  if (sha256_raw(body) != bytes.substr(bytes.size() - kDigestBytes))
    throw IntegrityError(what + " failed its checksum (corrupted or truncated)");
  return body.substr(magic.size());
}

template <class Enum>
Enum enum_from(std::uint8_t v, std::uint8_t count, const std::string& what) {
  if (v >= count) throw IntegrityError(what + ": enum value " + std::to_string(v) + " out of range");
  return static_cast<Enum>(v);
}

void write_network_body(ByteWriter& w, const NetworkParams& p) {
  const auto& c = p.config;
  w.u64(c.input_dim);
  w.u64(c.layer_sizes.size());
  for (auto s : c.layer_sizes) w.u64(s);
  w.u64(c.head_count);
  w.f64(c.dropout_rate);
  w.u8(static_cast<std::uint8_t>(c.dropout_placement));
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.u8(static_cast<std::uint8_t>(c.output));
  w.u64(p.step_count);
  const auto flat = p.flatten();
  w.u64(flat.size());
  for (double v : flat) w.f64(v);
}

std::string require_string(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_string())
    throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must be a string");
  return it->get<std::string>();
}

std::uint64_t require_uint(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_unsigned())
    throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must be a nonnegative integer");
  return it->get<std::uint64_t>();
}

double require_number(const json& obj, const char* key, std::size_t line) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number())
    throw ParseError("line " + std::to_string(line) + ": field '" + key + "' must be a number");
  return it->get<double>();
}

}  // namespace

// --- files -------------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// --- CSV -----------------------------------------------------------------------

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
  const boost::escaped_list_separator<char> sep('\\', ',', '"');
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    try {
      Tokenizer tok(line, sep);
      fields.assign(tok.begin(), tok.end());
    } catch (const boost::escaped_list_error& e) {
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw ParseError(path.string() + " line " + std::to_string(line_no) + ": expected " +
                       std::to_string(table.header.size()) + " fields, found " + std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
  }
  if (table.header.empty()) throw ParseError(path.string() + ": missing header row");
  return table;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n\\") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"' || c == '\\') q.push_back('\\');
      q.push_back(c);
    }
    return q + "\"";
  };
  std::ostringstream out;
  auto row = [&](const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << field(r[i]);
    out << '\n';
  };
  row(table.header);
  for (const auto& r : table.rows) row(r);
  write_file(path, out.str());
}

void write_catalog(const Catalog& catalog, const fs::path& dir) {
  auto entities = [](const RowMatrix& m, const std::vector<FeatureBlock>& schema, const std::vector<std::string>& ids,
                     const std::string& id_col) {
    CsvTable t;
    t.header.push_back(id_col);
    std::vector<FeatureBlock> blocks = schema;
    if (blocks.empty())
      for (std::size_t j = 0; j < m.cols; ++j) blocks.push_back({"f" + std::to_string(j), false, 1, {}});
    for (const auto& b : blocks) t.header.push_back((b.categorical ? "c_" : "n_") + b.name);
    for (std::size_t r = 0; r < m.rows; ++r) {
      std::vector<std::string> row{ids[r]};
      std::size_t col = 0;
      for (const auto& b : blocks) {
        if (b.categorical) {
          std::size_t hot = 0;
          for (std::size_t k = 0; k < b.width; ++k)
            if (m(r, col + k) != 0.0) hot = k;
          row.push_back(b.categories[hot]);
        } else {
          row.push_back(format_double(m(r, col)));
        }
        col += b.width;
      }
      t.rows.push_back(std::move(row));
    }
    return t;
  };
  fs::create_directories(dir);
  write_csv(dir / "users.csv", entities(catalog.user_features, catalog.user_schema, catalog.user_ids, "user_id"));
  write_csv(dir / "ads.csv", entities(catalog.ad_features, catalog.ad_schema, catalog.ad_ids, "ad_id"));
  CsvTable labels{{"user_id", "ad_id", "rating"}, {}};
  CsvTable truth{{"user_id", "ad_id", "ctr"}, {}};
  for (std::size_t u = 0; u < catalog.users(); ++u)
    for (std::size_t a = 0; a < catalog.ads(); ++a) {
      labels.rows.push_back({catalog.user_ids[u], catalog.ad_ids[a], catalog.label(u, a) ? "5" : "1"});
      if (catalog.truth_ctr)
        truth.rows.push_back({catalog.user_ids[u], catalog.ad_ids[a], format_double(catalog.truth(u, a))});
    }
  write_csv(dir / "labels.csv", labels);
  if (catalog.truth_ctr) write_csv(dir / "truth.csv", truth);
}

// --- checkpoints ---------------------------------------------------------------

std::string encode_network(const NetworkParams& params) {
  params.check_shapes();
  ByteWriter w;
  w.raw(kNetworkMagic);
  write_network_body(w, params);
  return seal(w.take());
}

NetworkParams decode_network(std::string_view bytes) {
  ByteReader r(unseal(bytes, kNetworkMagic, "network checkpoint"), "network checkpoint");
  NetworkConfig c;
  c.input_dim = r.count(1u << 30);
  c.layer_sizes.resize(r.count(1024));
  for (auto& s : c.layer_sizes) s = r.count(1u << 30);
  c.head_count = r.count(1u << 20);
  c.dropout_rate = r.f64();
  c.dropout_placement = enum_from<DropoutPlacement>(r.u8(), 3, "dropout placement");
  c.activation = enum_from<Activation>(r.u8(), 1, "activation");
  c.output = enum_from<OutputKind>(r.u8(), 1, "output kind");
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("network checkpoint holds an invalid config: ") + e.what());
  }
  NetworkParams p = init_network(c, 0);
  p.step_count = r.u64();
  const std::size_t n = r.count(std::size_t{1} << 32);
  if (n != p.parameter_count())
    throw IntegrityError("network checkpoint has " + std::to_string(n) + " parameters, config needs " +
                         std::to_string(p.parameter_count()));
  std::vector<double> flat(n);
  for (auto& v : flat) v = r.f64();
  if (!r.done()) throw IntegrityError("network checkpoint has trailing bytes");
  p.assign_flat(flat);
  if (!p.all_finite()) throw IntegrityError("network checkpoint holds non-finite parameters");
  return p;
}

std::string encode_sampler(const Sampler& sampler) {
  const auto& c = sampler.config();
  const auto& o = sampler.optimizer_config();
  ByteWriter w;
  w.raw(kSamplerMagic);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.u64(c.members);
  w.u8(static_cast<std::uint8_t>(c.data_scheme));
  w.f64(c.p_keep);
  w.u64(c.seed);
  w.u8(c.shared_mask ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(o.kind));
  w.f64(o.learning_rate);
  w.f64(o.decay);
  w.f64(o.epsilon);
  w.u8(o.decay_reading ? static_cast<std::uint8_t>(*o.decay_reading) + 1 : 0);
  const auto nets = sampler.networks();
  w.u64(nets.size());
  for (const auto& n : nets) {
    const auto blob = encode_network(n);
    w.u64(blob.size());
    w.raw(blob);
  }
  return seal(w.take());
}

Sampler decode_sampler(std::string_view bytes) {
  ByteReader r(unseal(bytes, kSamplerMagic, "sampler checkpoint"), "sampler checkpoint");
  SamplerConfig c;
  c.kind = enum_from<SamplerKind>(r.u8(), 6, "sampler kind");
  c.members = r.count(1u << 20);
  c.data_scheme = enum_from<DataScheme>(r.u8(), 2, "data scheme");
  c.p_keep = r.f64();
  c.seed = r.u64();
  c.shared_mask = r.u8() != 0;
  OptimizerConfig o;
  o.kind = enum_from<OptimizerKind>(r.u8(), 2, "optimizer kind");
  o.learning_rate = r.f64();
  o.decay = r.f64();
  o.epsilon = r.f64();
  const auto reading = r.u8();
  if (reading > 2) throw IntegrityError("sampler checkpoint: decay reading out of range");
  if (reading) o.decay_reading = static_cast<DecayReading>(reading - 1);
  std::vector<NetworkParams> nets(r.count(1u << 20));
  for (auto& n : nets) {
    const auto len = r.count(std::size_t{1} << 40);
    n = decode_network(r.raw(len));
  }
  if (!r.done()) throw IntegrityError("sampler checkpoint has trailing bytes");
  if (nets.empty()) throw IntegrityError("sampler checkpoint holds no networks");
  c.net = nets.front().config;
  try {
    return Sampler(c, o, std::move(nets));
  } catch (const ConfigError& e) {
    throw IntegrityError(std::string("sampler checkpoint holds an invalid config: ") + e.what());
  }
}

void save_checkpoint(const Sampler& sampler, const fs::path& path) { write_file(path, encode_sampler(sampler)); }
Sampler load_checkpoint(const fs::path& path) { return decode_sampler(read_file(path)); }
void save_network(const NetworkParams& params, const fs::path& path) { write_file(path, encode_network(params)); }
NetworkParams load_network(const fs::path& path) { return decode_network(read_file(path)); }

// --- impression log --------------------------------------------------------------

std::string encode_impression(const Impression& imp) {
  ordered_json j;
  j["round"] = imp.round;
  j["user_id"] = imp.user_id;
  j["ad_id"] = imp.ad_id;
  j["served_score"] = imp.served_score;
  j["point_score"] = imp.point_score;
  j["label"] = imp.label;
  j["policy_tag"] = imp.policy_tag;
  j["impression_id"] = imp.impression_id;
  j["run_id"] = imp.run_id;
  return j.dump();
}

Impression decode_impression(std::string_view line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("line " + std::to_string(line_number) + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("line " + std::to_string(line_number) + ": record is not an object");
  static const std::vector<std::string> keys{"round",      "user_id", "ad_id",         "served_score", "point_score",
                                             "label",      "policy_tag", "impression_id", "run_id"};
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ParseError("line " + std::to_string(line_number) + ": unknown field '" + k + "'");
  Impression imp;
  imp.round = require_uint(j, "round", line_number);
  imp.user_id = require_string(j, "user_id", line_number);
  imp.ad_id = require_string(j, "ad_id", line_number);
  imp.served_score = require_number(j, "served_score", line_number);
  imp.point_score = require_number(j, "point_score", line_number);
  const auto label = require_uint(j, "label", line_number);
  if (label > 1) throw ParseError("line " + std::to_string(line_number) + ": label must be 0 or 1");
  imp.label = static_cast<std::uint8_t>(label);
  imp.policy_tag = require_string(j, "policy_tag", line_number);
  imp.impression_id = require_uint(j, "impression_id", line_number);
  imp.run_id = require_string(j, "run_id", line_number);
  return imp;
}

void write_impressions(std::span<const Impression> log, const fs::path& path) {
  std::string out;
  for (const auto& imp : log) {
    out += encode_impression(imp);
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Impression> read_impressions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<Impression> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto imp = decode_impression(line, n);
    if (!out.empty() && imp.impression_id <= out.back().impression_id)
      throw IntegrityError("line " + std::to_string(n) + ": impression_id " + std::to_string(imp.impression_id) +
                           " does not increase (previous " + std::to_string(out.back().impression_id) + ")");
    out.push_back(std::move(imp));
  }
  return out;
}

ImpressionWriter::ImpressionWriter(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
}

void ImpressionWriter::append(std::span<const Impression> records) {
  for (const auto& imp : records) {
    if (any_ && imp.impression_id <= last_id_)
      throw ContractViolation("impression ids must increase (" + std::to_string(imp.impression_id) + " after " +
                              std::to_string(last_id_) + ")");
    last_id_ = imp.impression_id;
    any_ = true;
    out_ << encode_impression(imp) << '\n';
  }
}

void ImpressionWriter::flush() {
  out_.flush();
  if (!out_) throw IoError("failed writing the impression log");
}

// --- digests, reports ------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) { return to_hex(sha256_raw(bytes)); }
std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::string canonical_config_digest(const json& doc) { return sha256_hex(json(doc).dump()); }

std::string canonical_config_digest(const ExperimentConfig& config) {
  json doc = json::parse(to_json(config).dump());
  doc.erase("output_dir");
  return canonical_config_digest(doc);
}

ordered_json report_to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["model"] = r.model;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  j["run_id"] = r.run_id;
  j["visits"] = r.visits;
  j["impressions"] = r.impressions;
  j["clicks"] = r.clicks;
  j["retrains"] = r.retrains;
  j["stopped_early"] = r.stopped_early;
  j["stop_reason"] = r.stop_reason;
  j["cumulative_ctr"] = r.cumulative_ctr;
  j["random_ctr"] = r.random_ctr;
  j["ctr_uplift_pct"] = r.ctr_uplift_pct;
  j["train_pr_auc"] = opt(r.train_pr_auc);
  j["test_pr_auc"] = opt(r.test_pr_auc);
  j["roc_auc"] = opt(r.roc_auc);
  j["rce_pct"] = opt(r.rce_pct);
  j["log_loss"] = opt(r.log_loss);
  j["warm_start_train_pr_auc"] = opt(r.warm_start_train_pr_auc);
  j["final_regret"] = r.regret_series.empty() ? ordered_json(nullptr) : ordered_json(r.regret_series.back());
  return j;
}

void write_report(const MetricsReport& report, const fs::path& path) {
  write_file(path, report_to_json(report).dump(2) + "\n");
}

void write_series(const MetricsReport& report, const fs::path& path) {
  CsvTable t{{"round", "cumulative_ctr", "regret"}, {}};
  for (std::size_t i = 0; i < report.ctr_series.size(); ++i)
    t.rows.push_back({std::to_string(i), format_double(report.ctr_series[i]),
                      i < report.regret_series.size() ? format_double(report.regret_series[i]) : ""});
  write_csv(path, t);
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw IoError("refusing to overwrite non-empty directory '" + dir.string() + "' (use --force)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  ordered_json list = ordered_json::array();
  for (const auto& f : files)
    list.push_back({{"path", f.generic_string()},
                    {"bytes", static_cast<std::uint64_t>(fs::file_size(dir / f))},
                    {"sha256", sha256_file(dir / f)}});
  write_file(dir / "manifest.json", ordered_json{{"files", list}}.dump(2) + "\n");
}

void verify_manifest(const fs::path& dir) {
  json doc;
  try {
    doc = json::parse(read_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("manifest is unreadable: ") + e.what());
  }
  for (const auto& f : doc.at("files")) {
    const fs::path p = dir / f.at("path").get<std::string>();
    if (!fs::exists(p)) throw IntegrityError("manifest lists missing file '" + p.string() + "'");
    if (fs::file_size(p) != f.at("bytes").get<std::uint64_t>() || sha256_file(p) != f.at("sha256").get<std::string>())
      throw IntegrityError("file '" + p.string() + "' differs from its manifest entry");
  }
}

}  // namespace bsim
