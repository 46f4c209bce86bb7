#pragma once

#include <map>
#include <string>
#include <vector>

#include "multirater/cohort_sim.hpp"
#include "multirater/eval.hpp"
#include "multirater/io.hpp"
#include "multirater/regimes.hpp"

namespace multirater {

/// Everything a batch experiment needs: cohort, architecture, regime list,
/// optimizer hyperparameters, loss weights, seeds, output directory.
struct ExperimentConfig {
  CohortConfig cohort;
  Architecture arch;
  std::vector<RegimeName> regimes;
  TrainHyper hyper;
  LossWeights weights;
  std::map<std::string, LossWeights> regime_weights;  // per-regime overrides
  ConsistencyVariant cons_variant = ConsistencyVariant::Euclidean;
  FlagConfig flags;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = ".";

  LossWeights weights_for(RegimeName name) const;
};

ExperimentConfig experiment_from_kv(const KeyValueConfig& kv);

/// Loads the config file and applies MULTIRATER_* environment overrides.
ExperimentConfig load_experiment_config(const std::string& path, bool env_overrides = true);

/// Dataset + manifest (config echo, seed, summary stats with the measured
/// mean agreement). Returns the manifest path.
std::string run_simulate(const ExperimentConfig& config, const std::string& out_path);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string history_path;
};

TrainOutputs run_train(const ExperimentConfig& config, const std::string& dataset_path,
                       RegimeName regime, std::uint64_t seed, const std::string& out_dir);

/// Writes <out_prefix>.json and <out_prefix>.csv.
MetricReport run_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& out_prefix, const EvalOptions& options = {},
                          const std::string& regime_label = "", std::uint64_t seed = 0);

/// One CSV table, one row per report, with per-metric rank columns.
void run_compare(const std::vector<std::string>& report_paths, const std::string& out_csv);

struct IntrospectResult {
  std::vector<int> flagged;
  double kld_before = 0.0;
  double mae_before = 0.0;
  double kld_after = 0.0;
  double mae_after = 0.0;
  bool retrained = false;
};

/// Flags inconsistent raters; when any are flagged (and retraining is
/// enabled) retrains without them and reports consensus fidelity before and
/// after, measured against the retained raters' consensus.
IntrospectResult run_introspect(const ExperimentConfig& config,
                                const std::string& checkpoint_path,
                                const std::string& dataset_path, std::uint64_t seed,
                                const std::string& out_path, bool retrain = true);

}  // namespace multirater
