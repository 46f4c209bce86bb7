#include "multirater/io.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "multirater/errors.hpp"

extern char** environ;

namespace multirater {

using nlohmann::json;

namespace {

json optional_to_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.size();
  Eigen::MatrixXd m(rows, rows == 0 ? 0 : j[0].size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < j[i].size(); ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

json quartiles_to_json(const std::optional<QuartileSummary>& q) {
  if (!q) return json(nullptr);
  return json{{"q1", q->q1}, {"median", q->median}, {"q3", q->q3}, {"count", q->count}};
}

std::optional<QuartileSummary> quartiles_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  QuartileSummary q;
  q.q1 = j.at("q1").get<double>();
  q.median = j.at("median").get<double>();
  q.q3 = j.at("q3").get<double>();
  q.count = j.at("count").get<int>();
  return q;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

}  // namespace

void write_dataset_jsonl(const SyntheticDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (int i = 0; i < dataset.n_samples(); ++i) {
    const RatingRecord& rec = dataset.records[i];
    json line;
    line["sample_id"] = rec.sample_id;
    line["true_class"] = rec.true_class;
    line["difficulty"] = rec.difficulty;
    line["rater_labels"] =
        std::vector<int>(rec.rater_labels.data(), rec.rater_labels.data() + rec.rater_labels.size());
    line["features"] = std::vector<double>(dataset.features.row(i).begin(),
                                           dataset.features.row(i).end());
    const Eigen::Vector4d code = dataset.shape_codes[i].as_vector();
    line["shape_code"] = std::vector<double>(code.data(), code.data() + 4);
    line["split"] = dataset.split[i] == 1 ? "test" : "train";
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("failed while writing: " + path);
}

SyntheticDataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path);
  SyntheticDataset ds;
  std::vector<std::vector<double>> feature_rows;
  std::string line;
  int lineno = 0;
  int max_class = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      RatingRecord rec;
      rec.sample_id = j.at("sample_id").get<int>();
      rec.true_class = j.value("true_class", -1);
      rec.difficulty = j.value("difficulty", 0.0);
      const auto labels = j.at("rater_labels").get<std::vector<int>>();
      rec.rater_labels = Eigen::Map<const Eigen::VectorXi>(labels.data(), labels.size());
      for (int l : labels) max_class = std::max(max_class, l);
      max_class = std::max(max_class, rec.true_class);
      feature_rows.push_back(j.at("features").get<std::vector<double>>());
      const auto code = j.at("shape_code").get<std::vector<double>>();
      if (code.size() != 4) throw IoError("shape_code must have 4 entries");
      ds.shape_codes.push_back(ShapeCode{code[0], code[1], code[2], code[3]});
      ds.split.push_back(j.at("split").get<std::string>() == "test" ? 1 : 0);
      ds.records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw IoError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ds.records.empty()) throw IoError("dataset is empty: " + path);
  ds.n_raters = static_cast<int>(ds.records.front().rater_labels.size());
  ds.n_classes = max_class + 1;
  ds.features.resize(feature_rows.size(), feature_rows.front().size());
  for (std::size_t i = 0; i < feature_rows.size(); ++i) {
    if (feature_rows[i].size() != static_cast<std::size_t>(ds.features.cols())) {
      throw IoError(path + ": inconsistent feature width at record " + std::to_string(i));
    }
    ds.features.row(i) =
        Eigen::Map<const Eigen::VectorXd>(feature_rows[i].data(), feature_rows[i].size());
  }
  return ds;
}

void write_checkpoint(const std::string& path, const ModelParams& params) {
  const Architecture arch = architecture_of(params);
  json header;
  header["format"] = "multirater-checkpoint-v1";
  header["feature_dim"] = arch.feature_dim;
  header["trunk_widths"] = arch.trunk_widths;
  header["n_classes"] = arch.n_classes;
  header["n_raters"] = arch.n_raters;
  header["param_count"] = param_count(arch);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << header.dump() << '\n';
  const Eigen::VectorXd flat = flatten(params);
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw IoError("failed while writing: " + path);
}

ModelParams read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw IoError("checkpoint header missing: " + path);
  Architecture arch;
  std::size_t expected = 0;
  try {
    const json header = json::parse(header_line);
    if (header.at("format").get<std::string>() != "multirater-checkpoint-v1") {
      throw IoError("unsupported checkpoint format in " + path);
    }
    arch.feature_dim = header.at("feature_dim").get<int>();
    arch.trunk_widths = header.at("trunk_widths").get<std::vector<int>>();
    arch.n_classes = header.at("n_classes").get<int>();
    arch.n_raters = header.at("n_raters").get<int>();
    expected = header.at("param_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw IoError(path + ": bad checkpoint header: " + e.what());
  }
  if (expected != param_count(arch)) {
    throw IoError(path + ": header param_count does not match the architecture");
  }
  Eigen::VectorXd flat(expected);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(expected * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != expected * sizeof(double)) {
    throw IoError(path + ": truncated parameter block");
  }
  return unflatten(arch, flat);
}

void write_history_csv(const TrainingHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "iteration,stage,shape,consensus_ce,consensus_rmse,rater_ce,cons,var,total,"
         "snapshot_consensus_mae\n";
  for (const HistoryRow& row : history.rows) {
    out << row.iteration << ',' << row.stage << ',' << format_double(row.losses.shape) << ','
        << format_double(row.losses.consensus_ce) << ','
        << format_double(row.losses.consensus_rmse) << ','
        << format_double(row.losses.rater_ce) << ',' << format_double(row.losses.cons) << ','
        << format_double(row.losses.var) << ',' << format_double(row.losses.total) << ',';
    if (std::isfinite(row.snapshot_consensus_mae)) {
      out << format_double(row.snapshot_consensus_mae);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing: " + path);
}

std::string report_to_json(const MetricReport& report, const std::string& regime,
                           std::uint64_t seed) {
  json j;
  j["regime"] = regime;
  j["seed"] = seed;
  j["n_eval_samples"] = report.n_eval_samples;
  j["kld"] = report.kld;
  j["mae_mean"] = report.mae_mean;
  j["mae_sd"] = report.mae_sd;
  j["agreement_observed"] = matrix_to_json(report.agreement_observed);
  j["agreement_predicted"] = matrix_to_json(report.agreement_predicted);
  j["agreement_pearson"] = optional_to_json(report.agreement_pearson);
  j["agreement_mad"] = report.agreement_mad;
  j["consistency_median"] = report.consistency_median;
  j["consistency_iqr"] = report.consistency_iqr;
  json spearman_raters = json::array();
  for (const auto& s : report.spearman_per_rater) spearman_raters.push_back(optional_to_json(s));
  j["spearman_per_rater"] = spearman_raters;
  j["spearman_consensus"] = optional_to_json(report.spearman_consensus);
  json agree = json::array();
  for (const AgreeDisagree& ad : report.agree_disagree) {
    agree.push_back(json{{"agree", quartiles_to_json(ad.agree)},
                         {"disagree", quartiles_to_json(ad.disagree)}});
  }
  j["agree_disagree"] = agree;
  j["flagged_raters"] = report.flagged_raters;
  return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text, std::string* regime,
                              std::uint64_t* seed) {
  MetricReport report;
  try {
    const json j = json::parse(text);
    if (regime) *regime = j.value("regime", std::string{});
    if (seed) *seed = j.value("seed", std::uint64_t{0});
    report.n_eval_samples = j.value("n_eval_samples", 0);
    report.kld = j.at("kld").get<double>();
    report.mae_mean = j.at("mae_mean").get<double>();
    report.mae_sd = j.at("mae_sd").get<double>();
    report.agreement_observed = matrix_from_json(j.at("agreement_observed"));
    report.agreement_predicted = matrix_from_json(j.at("agreement_predicted"));
    report.agreement_pearson = optional_from_json(j.at("agreement_pearson"));
    report.agreement_mad = j.at("agreement_mad").get<double>();
    report.consistency_median = j.at("consistency_median").get<double>();
    report.consistency_iqr = j.at("consistency_iqr").get<double>();
    for (const json& s : j.at("spearman_per_rater")) {
      report.spearman_per_rater.push_back(optional_from_json(s));
    }
    report.spearman_consensus = optional_from_json(j.at("spearman_consensus"));
    for (const json& ad : j.at("agree_disagree")) {
      AgreeDisagree entry;
      entry.agree = quartiles_from_json(ad.at("agree"));
      entry.disagree = quartiles_from_json(ad.at("disagree"));
      report.agree_disagree.push_back(entry);
    }
    report.flagged_raters = j.at("flagged_raters").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("bad metric report: ") + e.what());
  }
  return report;
}

void write_report_json(const MetricReport& report, const std::string& regime, std::uint64_t seed,
                       const std::string& path) {
  write_file(path, report_to_json(report, regime, seed));
}

std::string report_csv_header(int n_raters) {
  std::string header =
      "regime,seed,n_eval_samples,kld,mae_mean,mae_sd,agreement_pearson,agreement_mad,"
      "consistency_median,consistency_iqr,spearman_consensus";
  for (int r = 0; r < n_raters; ++r) header += ",spearman_r" + std::to_string(r);
  header += ",spearman_rater_mean,flagged_raters";
  return header;
}

std::string report_csv_row(const MetricReport& report, const std::string& regime,
                           std::uint64_t seed) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : ""; };
  std::string row = regime + "," + std::to_string(seed) + "," +
                    std::to_string(report.n_eval_samples) + "," + format_double(report.kld) +
                    "," + format_double(report.mae_mean) + "," + format_double(report.mae_sd) +
                    "," + opt(report.agreement_pearson) + "," +
                    format_double(report.agreement_mad) + "," +
                    format_double(report.consistency_median) + "," +
                    format_double(report.consistency_iqr) + "," +
                    opt(report.spearman_consensus);
  double sum = 0.0;
  int count = 0;
  for (const auto& s : report.spearman_per_rater) {
    row += "," + opt(s);
    if (s) {
      sum += *s;
      ++count;
    }
  }
  row += "," + (count > 0 ? format_double(sum / count) : std::string{});
  row += ",";
  for (std::size_t i = 0; i < report.flagged_raters.size(); ++i) {
    if (i > 0) row += ";";
    row += std::to_string(report.flagged_raters[i]);
  }
  return row;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_text(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig config;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected `key = value`");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    }
    config.entries_[key] = value;
  }
  return config;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key `" + key + "`: expected integer, got `" + it->second + "`");
  }
}

std::uint64_t KeyValueConfig::get_uint64(const std::string& key, std::uint64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key `" + key + "`: expected unsigned integer, got `" + it->second +
                      "`");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key `" + key + "`: expected real, got `" + it->second + "`");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key `" + key + "`: expected boolean, got `" + it->second + "`");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<int> out;
  for (const std::string& item : split_list(it->second)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "`: expected integer list");
    }
  }
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<double> out;
  for (const std::string& item : split_list(it->second)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("config key `" + key + "`: expected real list");
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  return split_list(it->second);
}

void KeyValueConfig::apply_env_overrides(const std::string& prefix) {
  for (char** env = environ; *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const std::string value = entry.substr(eq + 1);
    // A__B maps to section separator, single underscores stay literal.
    std::string key;
    for (std::size_t i = 0; i < name.size(); ++i) {
      if (name[i] == '_' && i + 1 < name.size() && name[i + 1] == '_') {
        key += '.';
        ++i;
      } else {
        key += static_cast<char>(std::tolower(static_cast<unsigned char>(name[i])));
      }
    }
    if (!key.empty()) entries_[key] = value;
  }
}

std::string format_double(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  if (!out) throw IoError("failed while writing: " + path);
}

}  // namespace multirater
