#pragma once

#include <map>
#include <string>
#include <vector>

#include "multirater/cohort_sim.hpp"
#include "multirater/eval.hpp"
#include "multirater/network.hpp"
#include "multirater/regimes.hpp"

namespace multirater {

/// Line-delimited dataset: one JSON object per line with fields sample_id,
/// true_class, difficulty, rater_labels, features, shape_code, split.
void write_dataset_jsonl(const SyntheticDataset& dataset, const std::string& path);
SyntheticDataset read_dataset_jsonl(const std::string& path);

/// Checkpoint: one JSON header line (format tag + architecture), then the
/// flat little-endian float64 parameter block. Parameter order: trunk layers
/// in order (weight column-major, then bias), shape head, consensus head,
/// rater heads 0..R-1. Byte-stable for identical params.
void write_checkpoint(const std::string& path, const ModelParams& params);
ModelParams read_checkpoint(const std::string& path);

/// Columnar training history: iteration, stage, per-term losses, total,
/// optional snapshot column.
void write_history_csv(const TrainingHistory& history, const std::string& path);

std::string report_to_json(const MetricReport& report, const std::string& regime,
                           std::uint64_t seed);
MetricReport report_from_json(const std::string& text, std::string* regime = nullptr,
                              std::uint64_t* seed = nullptr);
void write_report_json(const MetricReport& report, const std::string& regime, std::uint64_t seed,
                       const std::string& path);

/// Flat CSV row of the report's scalar metrics (matrices stay in the JSON).
std::string report_csv_header(int n_raters);
std::string report_csv_row(const MetricReport& report, const std::string& regime,
                           std::uint64_t seed);

/// Flat `key = value` configuration text with dotted sections and `#`
/// comments. Environment overrides map MULTIRATER_A__B_C to key "a.b_c".
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_text(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  void apply_env_overrides(const std::string& prefix);
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

/// Canonical %.17g formatting used by every CSV writer.
std::string format_double(double value);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace multirater
