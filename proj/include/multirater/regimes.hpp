#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "multirater/cohort_sim.hpp"
#include "multirater/losses.hpp"
#include "multirater/network.hpp"

namespace multirater {

enum class RegimeName { ConsensusOnly, MultiOnly, Disjoint, ConsensusMulti, ConsensusMultiVar };

RegimeName parse_regime(const std::string& name);
std::string to_string(RegimeName name);
const std::vector<RegimeName>& all_regimes();

struct TrainingStage {
  StageObjective objective;
  FreezeMask frozen;
  int iterations = 0;
};

struct Regime {
  RegimeName name = RegimeName::ConsensusOnly;
  std::vector<TrainingStage> stages;
};

/// Canonical staging for the five regimes. The iteration budget is split
/// equally across stages, remainder to the last stage.
Regime build_schedule(RegimeName name, int budget, const LossWeights& weights = {},
                      ConsistencyVariant cons_variant = ConsistencyVariant::Euclidean);

struct TrainHyper {
  double lr = 1e-4;
  int batch_size = 32;
  int budget = 10000;
  int snapshot_every = 0;  // 0 disables evaluation snapshots
};

struct HistoryRow {
  long iteration = 0;
  int stage = 0;
  LossBreakdown losses;
  double snapshot_consensus_mae = std::numeric_limits<double>::quiet_NaN();
};

struct TrainingHistory {
  int snapshot_every = 0;
  std::vector<HistoryRow> rows;
};

struct TrainResult {
  ModelParams params;
  TrainingHistory history;
};

/// Per-sample supervision for one dataset. Raters absent from active_raters
/// get zero weight everywhere and are dropped from the consensus average.
struct TrainingTargets {
  std::vector<SampleTargets> samples;
  std::vector<bool> active_raters;
};

TrainingTargets build_targets(const SyntheticDataset& dataset,
                              const std::vector<bool>& active_raters = {});

/// Deterministic in (dataset, regime, arch, hyper, seed): fixed minibatch
/// order from a seeded shuffler, frozen groups untouched within each stage.
TrainResult train(const SyntheticDataset& dataset, const Regime& regime,
                  const Architecture& arch, const TrainHyper& hyper, std::uint64_t seed,
                  const std::vector<bool>& active_raters = {});

}  // namespace multirater
