#include "multirater/regimes.hpp"

#include <cmath>

#include "multirater/errors.hpp"
#include "multirater/rng.hpp"

namespace multirater {

namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566ULL;

LossSet consensus_losses() {
  LossSet set;
  set.shape = true;
  set.consensus_ce = true;
  set.consensus_rmse = true;
  return set;
}

LossSet shape_only() {
  LossSet set;
  set.shape = true;
  return set;
}

LossSet rater_only() {
  LossSet set;
  set.rater_ce = true;
  return set;
}

FreezeMask freeze_raters() {
  FreezeMask mask;
  mask.rater_heads = true;
  return mask;
}

FreezeMask freeze_all_but_raters() {
  FreezeMask mask;
  mask.trunk = true;
  mask.shape_head = true;
  mask.consensus_head = true;
  return mask;
}

std::vector<int> split_budget(int budget, int n_stages) {
  if (budget < n_stages) throw ConfigError("build_schedule: budget smaller than stage count");
  const int base = budget / n_stages;
  std::vector<int> iterations(n_stages, base);
  iterations.back() += budget - base * n_stages;
  return iterations;
}

}  // namespace

RegimeName parse_regime(const std::string& name) {
  for (RegimeName r : all_regimes()) {
    if (to_string(r) == name) return r;
  }
  throw ConfigError("unknown regime name: " + name);
}

std::string to_string(RegimeName name) {
  switch (name) {
    case RegimeName::ConsensusOnly: return "ConsensusOnly";
    case RegimeName::MultiOnly: return "MultiOnly";
    case RegimeName::Disjoint: return "Disjoint";
    case RegimeName::ConsensusMulti: return "ConsensusMulti";
    case RegimeName::ConsensusMultiVar: return "ConsensusMultiVar";
  }
  throw ConfigError("unknown regime value");
}

const std::vector<RegimeName>& all_regimes() {
  static const std::vector<RegimeName> names = {
      RegimeName::ConsensusOnly, RegimeName::MultiOnly, RegimeName::Disjoint,
      RegimeName::ConsensusMulti, RegimeName::ConsensusMultiVar};
  return names;
}

Regime build_schedule(RegimeName name, int budget, const LossWeights& weights,
                      ConsistencyVariant cons_variant) {
  if (budget < 1) throw ConfigError("build_schedule: budget must be >= 1");
  Regime regime;
  regime.name = name;

  auto stage = [&](LossSet active, FreezeMask frozen) {
    TrainingStage s;
    s.objective.active = active;
    s.objective.weights = weights;
    s.objective.cons_variant = cons_variant;
    s.frozen = frozen;
    return s;
  };

  switch (name) {
    case RegimeName::ConsensusOnly:
      regime.stages = {stage(consensus_losses(), freeze_raters())};
      break;
    case RegimeName::MultiOnly: {
      FreezeMask shape_frozen;
      shape_frozen.consensus_head = true;
      shape_frozen.rater_heads = true;
      regime.stages = {stage(shape_only(), shape_frozen),
                       stage(rater_only(), freeze_all_but_raters())};
      break;
    }
    case RegimeName::Disjoint:
      regime.stages = {stage(consensus_losses(), freeze_raters()),
                       stage(rater_only(), freeze_all_but_raters())};
      break;
    case RegimeName::ConsensusMulti:
    case RegimeName::ConsensusMultiVar: {
      LossSet joint = consensus_losses();
      joint.rater_ce = true;
      joint.cons = true;
      joint.var = name == RegimeName::ConsensusMultiVar;
      regime.stages = {stage(consensus_losses(), freeze_raters()),
                       stage(rater_only(), freeze_all_but_raters()),
                       stage(joint, FreezeMask{})};
      break;
    }
  }

  const std::vector<int> iterations = split_budget(budget, static_cast<int>(regime.stages.size()));
  for (std::size_t i = 0; i < regime.stages.size(); ++i) {
    regime.stages[i].iterations = iterations[i];
  }
  return regime;
}

TrainingTargets build_targets(const SyntheticDataset& dataset,
                              const std::vector<bool>& active_raters) {
  const int n_raters = dataset.n_raters;
  const int k = dataset.n_classes;
  std::vector<bool> active = active_raters;
  if (active.empty()) active.assign(n_raters, true);
  if (static_cast<int>(active.size()) != n_raters) {
    throw InputDomainError("build_targets: active_raters size mismatch");
  }
  int n_active = 0;
  for (bool a : active) n_active += a ? 1 : 0;
  if (n_active < 2) throw InputDomainError("build_targets: need at least 2 active raters");

  TrainingTargets targets;
  targets.active_raters = active;
  targets.samples.reserve(dataset.records.size());
  for (const RatingRecord& rec : dataset.records) {
    Eigen::VectorXi active_labels(n_active);
    int j = 0;
    for (int r = 0; r < n_raters; ++r) {
      if (active[r]) active_labels[j++] = rec.rater_labels[r];
    }
    SampleTargets t;
    t.consensus = consensus_distribution(active_labels, k);
    t.majority_class = majority_vote(t.consensus);
    t.consensus_weight = consensus_sample_weight(t.consensus);
    t.rater_labels = rec.rater_labels;
    t.rater_weights = Eigen::VectorXd::Zero(n_raters);
    for (int r = 0; r < n_raters; ++r) {
      if (active[r]) t.rater_weights[r] = 1.0 / t.consensus[rec.rater_labels[r]];
    }
    targets.samples.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    targets.samples[i].shape = dataset.shape_codes[i].as_vector();
  }
  return targets;
}

TrainResult train(const SyntheticDataset& dataset, const Regime& regime,
                  const Architecture& arch, const TrainHyper& hyper, std::uint64_t seed,
                  const std::vector<bool>& active_raters) {
  if (arch.feature_dim != dataset.feature_dim()) {
    throw ConfigError("train: architecture feature_dim does not match the dataset");
  }
  if (arch.n_classes != dataset.n_classes || arch.n_raters != dataset.n_raters) {
    throw ConfigError("train: architecture class/rater counts do not match the dataset");
  }
  std::vector<int> train_idx = dataset.train_indices();
  if (train_idx.empty()) throw InputDomainError("train: dataset has no train split");

  const TrainingTargets targets = build_targets(dataset, active_raters);

  TrainResult result;
  result.params = init_params(arch, seed);
  AdamState adam = make_adam_state(arch, AdamConfig{hyper.lr, 0.9, 0.999, 1e-8});
  result.history.snapshot_every = hyper.snapshot_every;
  result.history.rows.reserve(static_cast<std::size_t>(hyper.budget));

  RandomStream shuffle_stream = RandomStream::derive(seed, {kShuffleTag});
  shuffle_stream.shuffle(train_idx);
  std::size_t cursor = 0;
  const int batch = std::min<int>(hyper.batch_size, static_cast<int>(train_idx.size()));

  Eigen::MatrixXd x(batch, arch.feature_dim);
  std::vector<SampleTargets> batch_targets(batch);

  long iteration = 0;
  for (std::size_t stage_idx = 0; stage_idx < regime.stages.size(); ++stage_idx) {
    const TrainingStage& stage = regime.stages[stage_idx];
    for (int it = 0; it < stage.iterations; ++it, ++iteration) {
      for (int b = 0; b < batch; ++b) {
        if (cursor == train_idx.size()) {
          shuffle_stream.shuffle(train_idx);
          cursor = 0;
        }
        const int idx = train_idx[cursor++];
        x.row(b) = dataset.features.row(idx);
        batch_targets[b] = targets.samples[idx];
      }
      const ForwardTrace trace = forward(result.params, x);
      const ObjectiveResult obj = total_objective(stage.objective, batch_targets, trace);
      if (!std::isfinite(obj.terms.total)) {
        throw TrainingDivergence(
            "train: non-finite loss at iteration " + std::to_string(iteration), iteration);
      }
      const ModelGrads grads = backward(result.params, trace, obj.head_grads);
      adam_step(result.params, grads, adam, stage.frozen);

      HistoryRow row;
      row.iteration = iteration;
      row.stage = static_cast<int>(stage_idx);
      row.losses = obj.terms;
      if (hyper.snapshot_every > 0 && (iteration + 1) % hyper.snapshot_every == 0) {
        // Cheap fidelity snapshot: mean absolute error of the consensus
        // head's first-class probability over the test split.
        const std::vector<int> test_idx = dataset.test_indices();
        if (!test_idx.empty()) {
          double mae = 0.0;
          Eigen::MatrixXd xt(test_idx.size(), arch.feature_dim);
          for (std::size_t i = 0; i < test_idx.size(); ++i) {
            xt.row(i) = dataset.features.row(test_idx[i]);
          }
          const Eigen::MatrixXd sm = softmax_rows(forward(result.params, xt).consensus_logits);
          for (std::size_t i = 0; i < test_idx.size(); ++i) {
            mae += std::abs(sm(i, 0) - targets.samples[test_idx[i]].consensus[0]);
          }
          row.snapshot_consensus_mae = mae / static_cast<double>(test_idx.size());
        }
      }
      result.history.rows.push_back(row);
    }
  }
  return result;
}

}  // namespace multirater
