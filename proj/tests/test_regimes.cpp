#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "fd_check.hpp"
#include "multirater/cohort_sim.hpp"
#include "multirater/errors.hpp"
#include "multirater/eval.hpp"
#include "multirater/regimes.hpp"

using namespace multirater;

namespace {

CohortConfig quick_cohort(std::uint64_t seed, int n = 480, double noise = -1.0) {
  CohortConfig config = default_cohort_config();
  config.n_samples = n;
  config.n_test = n / 6;
  config.seed = seed;
  if (noise >= 0.0) config.noise_scale = noise;
  return config;
}

Architecture quick_arch() {
  Architecture arch;
  arch.trunk_widths = {32, 32};
  return arch;
}

double smoothed(const TrainingHistory& history, int stage, bool from_start, int window,
                double LossBreakdown::* term) {
  std::vector<double> values;
  for (const HistoryRow& row : history.rows) {
    if (row.stage == stage) values.push_back(row.losses.*term);
  }
  REQUIRE(static_cast<int>(values.size()) >= 2 * window);
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    sum += from_start ? values[i] : values[values.size() - 1 - i];
  }
  return sum / window;
}

}  // namespace

TEST_CASE("build_schedule emits the canonical staging") {
  const Regime consensus_only = build_schedule(RegimeName::ConsensusOnly, 10000);
  REQUIRE(consensus_only.stages.size() == 1);
  CHECK(consensus_only.stages[0].iterations == 10000);
  CHECK(consensus_only.stages[0].objective.active.shape);
  CHECK(consensus_only.stages[0].objective.active.consensus_ce);
  CHECK(consensus_only.stages[0].objective.active.consensus_rmse);
  CHECK_FALSE(consensus_only.stages[0].objective.active.rater_ce);
  CHECK(consensus_only.stages[0].frozen.rater_heads);
  CHECK_FALSE(consensus_only.stages[0].frozen.trunk);

  const Regime multi_only = build_schedule(RegimeName::MultiOnly, 10000);
  REQUIRE(multi_only.stages.size() == 2);
  CHECK(multi_only.stages[0].objective.active.shape);
  CHECK_FALSE(multi_only.stages[0].objective.active.consensus_ce);
  CHECK(multi_only.stages[1].objective.active.rater_ce);
  CHECK(multi_only.stages[1].frozen.trunk);
  CHECK(multi_only.stages[1].frozen.consensus_head);
  CHECK(multi_only.stages[1].frozen.shape_head);
  CHECK_FALSE(multi_only.stages[1].frozen.rater_heads);

  const Regime disjoint = build_schedule(RegimeName::Disjoint, 10000);
  REQUIRE(disjoint.stages.size() == 2);
  CHECK(disjoint.stages[0].objective.active.consensus_ce);
  CHECK(disjoint.stages[1].frozen.trunk);

  const Regime cm = build_schedule(RegimeName::ConsensusMulti, 10000);
  REQUIRE(cm.stages.size() == 3);
  CHECK(cm.stages[1].objective.active.rater_ce);
  CHECK(cm.stages[1].frozen.trunk);
  CHECK(cm.stages[2].objective.active.cons);
  CHECK_FALSE(cm.stages[2].objective.active.var);
  CHECK_FALSE(cm.stages[2].frozen.trunk);
  CHECK_FALSE(cm.stages[2].frozen.rater_heads);
  CHECK(cm.stages[0].iterations == 3333);
  CHECK(cm.stages[1].iterations == 3333);
  CHECK(cm.stages[2].iterations == 3334);

  const Regime cmv = build_schedule(RegimeName::ConsensusMultiVar, 9999);
  REQUIRE(cmv.stages.size() == 3);
  CHECK(cmv.stages[2].objective.active.var);
  CHECK(cmv.stages[0].iterations == 3333);
  CHECK(cmv.stages[2].iterations == 3333);

  CHECK_THROWS_AS(parse_regime("NoSuchRegime"), ConfigError);
  CHECK_THROWS_AS(build_schedule(RegimeName::Disjoint, 0), ConfigError);
  CHECK(parse_regime("Disjoint") == RegimeName::Disjoint);
  CHECK(to_string(RegimeName::ConsensusMultiVar) == "ConsensusMultiVar");
}

TEST_CASE("build_targets carries consensus, weights, and exclusions") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(3, 60));
  const TrainingTargets all = build_targets(ds);
  REQUIRE(all.samples.size() == 60);
  for (std::size_t i = 0; i < all.samples.size(); ++i) {
    const SampleTargets& t = all.samples[i];
    const ConsensusDistribution expected = consensus_distribution(ds.records[i].rater_labels, 4);
    CHECK(t.consensus.isApprox(expected, 1e-12));
    CHECK(t.majority_class == majority_vote(expected));
    CHECK(t.consensus_weight == doctest::Approx(consensus_sample_weight(expected)));
    for (int r = 0; r < 6; ++r) {
      CHECK(t.rater_weights[r] ==
            doctest::Approx(rater_sample_weight(ds.records[i].rater_labels, r, 4)));
    }
    CHECK(t.shape.isApprox(ds.shape_codes[i].as_vector(), 1e-12));
  }

  std::vector<bool> active(6, true);
  active[2] = false;
  active[4] = false;
  const TrainingTargets reduced = build_targets(ds, active);
  for (std::size_t i = 0; i < reduced.samples.size(); ++i) {
    const SampleTargets& t = reduced.samples[i];
    CHECK(t.rater_weights[2] == 0.0);
    CHECK(t.rater_weights[4] == 0.0);
    Eigen::VectorXi kept(4);
    int j = 0;
    for (int r = 0; r < 6; ++r) {
      if (active[r]) kept[j++] = ds.records[i].rater_labels[r];
    }
    CHECK(t.consensus.isApprox(consensus_distribution(kept, 4), 1e-12));
  }
  CHECK_THROWS_AS(build_targets(ds, std::vector<bool>(6, false)), InputDomainError);
}

TEST_CASE("train is deterministic in (config, seed)") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(5));
  const Architecture arch = quick_arch();
  TrainHyper hyper;
  hyper.budget = 240;
  const Regime regime = build_schedule(RegimeName::ConsensusMultiVar, hyper.budget);
  const TrainResult a = train(ds, regime, arch, hyper, 17);
  const TrainResult b = train(ds, regime, arch, hyper, 17);
  CHECK(flatten(a.params) == flatten(b.params));
  REQUIRE(a.history.rows.size() == b.history.rows.size());
  for (std::size_t i = 0; i < a.history.rows.size(); ++i) {
    CHECK(a.history.rows[i].losses.total == b.history.rows[i].losses.total);
  }
  const TrainResult c = train(ds, regime, arch, hyper, 18);
  CHECK(flatten(a.params) != flatten(c.params));
}

TEST_CASE("heads outside a regime stay bit-identical to initialization") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(7));
  const Architecture arch = quick_arch();
  TrainHyper hyper;
  hyper.budget = 200;
  const ModelParams init = init_params(arch, 23);

  const TrainResult consensus_only =
      train(ds, build_schedule(RegimeName::ConsensusOnly, hyper.budget), arch, hyper, 23);
  for (int r = 0; r < arch.n_raters; ++r) {
    CHECK(consensus_only.params.rater_heads[r].weight == init.rater_heads[r].weight);
    CHECK(consensus_only.params.rater_heads[r].bias == init.rater_heads[r].bias);
  }
  CHECK(consensus_only.params.trunk[0].weight != init.trunk[0].weight);

  const TrainResult multi_only =
      train(ds, build_schedule(RegimeName::MultiOnly, hyper.budget), arch, hyper, 23);
  CHECK(multi_only.params.consensus_head.weight == init.consensus_head.weight);
  CHECK(multi_only.params.consensus_head.bias == init.consensus_head.bias);
}

TEST_CASE("stage isolation: frozen groups match the end-of-previous-stage state") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(11));
  const Architecture arch = quick_arch();
  TrainHyper hyper;
  hyper.budget = 400;
  // Disjoint = stage A (consensus losses) then stage B (rater heads only,
  // everything else frozen). Stage A alone, run with the same seed, must
  // reproduce the trunk/consensus/shape blocks of the full run bit for bit.
  const TrainResult full =
      train(ds, build_schedule(RegimeName::Disjoint, hyper.budget), arch, hyper, 29);
  Regime stage_a_only = build_schedule(RegimeName::Disjoint, hyper.budget);
  stage_a_only.stages.resize(1);  // 200 iterations of the consensus stage
  const TrainResult partial = train(ds, stage_a_only, arch, hyper, 29);

  for (std::size_t l = 0; l < full.params.trunk.size(); ++l) {
    CHECK(full.params.trunk[l].weight == partial.params.trunk[l].weight);
    CHECK(full.params.trunk[l].bias == partial.params.trunk[l].bias);
  }
  CHECK(full.params.consensus_head.weight == partial.params.consensus_head.weight);
  CHECK(full.params.shape_head.weight == partial.params.shape_head.weight);
  // And the rater heads did train in stage B.
  CHECK(full.params.rater_heads[0].weight != partial.params.rater_heads[0].weight);
}

TEST_CASE("regime equivalence: zero-weight cons/var reduce stage C to the Disjoint loss set") {
  const fdcheck::Problem p = fdcheck::make_problem(909);
  const ForwardTrace trace = forward(p.params, p.features);

  StageObjective disjoint_set;
  disjoint_set.active.shape = true;
  disjoint_set.active.consensus_ce = true;
  disjoint_set.active.consensus_rmse = true;
  disjoint_set.active.rater_ce = true;

  LossWeights zeroed;
  zeroed.w_cons = 0.0;
  zeroed.w_var = 0.0;
  Regime cm = build_schedule(RegimeName::ConsensusMulti, 3, zeroed);
  Regime cmv = build_schedule(RegimeName::ConsensusMultiVar, 3, zeroed);
  disjoint_set.weights = zeroed;

  const ObjectiveResult reference = total_objective(disjoint_set, p.targets, trace);
  for (const StageObjective& stage_c :
       {cm.stages[2].objective, cmv.stages[2].objective}) {
    const ObjectiveResult obj = total_objective(stage_c, p.targets, trace);
    CHECK(obj.terms.total == doctest::Approx(reference.terms.total).epsilon(1e-15));
    CHECK(obj.head_grads.shape_out == reference.head_grads.shape_out);
    CHECK(obj.head_grads.consensus_logits.isApprox(reference.head_grads.consensus_logits, 1e-15));
    for (int r = 0; r < 3; ++r) {
      CHECK(obj.head_grads.rater_logits[r].isApprox(reference.head_grads.rater_logits[r], 1e-15));
    }
  }
}

TEST_CASE("excluded raters never train and are dropped from the consensus") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(13));
  const Architecture arch = quick_arch();
  TrainHyper hyper;
  hyper.budget = 150;
  const ModelParams init = init_params(arch, 31);
  std::vector<bool> active(6, true);
  active[1] = false;
  const TrainResult result = train(ds, build_schedule(RegimeName::ConsensusMultiVar, hyper.budget),
                                   arch, hyper, 31, active);
  CHECK(result.params.rater_heads[1].weight == init.rater_heads[1].weight);
  CHECK(result.params.rater_heads[1].bias == init.rater_heads[1].bias);
  CHECK(result.params.rater_heads[0].weight != init.rater_heads[0].weight);
}

TEST_CASE("noise-free cohort trains to high consensus accuracy under any regime") {
  CohortConfig config = quick_cohort(17, 1200, 0.0);
  config.difficulty_alpha = 1e-7;  // difficulty pinned to 0: fully separable
  config.difficulty_beta = 5.0;
  const SyntheticDataset ds = sample_dataset(config);
  const Architecture arch;  // full-width trunk
  TrainHyper hyper;
  hyper.budget = 6000;
  for (RegimeName name : {RegimeName::ConsensusOnly, RegimeName::ConsensusMultiVar}) {
    const TrainResult result = train(ds, build_schedule(name, hyper.budget), arch, hyper, 37);
    const std::vector<int> test = ds.test_indices();
    Eigen::MatrixXd x(test.size(), arch.feature_dim);
    for (std::size_t i = 0; i < test.size(); ++i) x.row(i) = ds.features.row(test[i]);
    const Eigen::MatrixXd sm = softmax_rows(forward(result.params, x).consensus_logits);
    int hits = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      int arg = 0;
      for (int c = 1; c < 4; ++c) {
        if (sm(i, c) > sm(i, arg)) arg = c;
      }
      if (arg == ds.records[test[i]].true_class) ++hits;
    }
    const double accuracy = static_cast<double>(hits) / test.size();
    CHECK(accuracy > 0.95);
  }
}

TEST_CASE("history records every iteration with its stage and active terms") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(19));
  const Architecture arch = quick_arch();
  TrainHyper hyper;
  hyper.budget = 90;
  hyper.snapshot_every = 30;
  const Regime regime = build_schedule(RegimeName::ConsensusMulti, hyper.budget);
  const TrainResult result = train(ds, regime, arch, hyper, 41);
  REQUIRE(result.history.rows.size() == 90);
  CHECK(result.history.rows[0].stage == 0);
  CHECK(result.history.rows[30].stage == 1);
  CHECK(result.history.rows[89].stage == 2);
  CHECK(result.history.rows[0].losses.shape > 0.0);
  CHECK(result.history.rows[0].losses.rater_ce == 0.0);   // inactive in stage A
  CHECK(result.history.rows[30].losses.rater_ce > 0.0);
  CHECK(result.history.rows[89].losses.cons > 0.0);
  int snapshots = 0;
  for (const HistoryRow& row : result.history.rows) {
    if (std::isfinite(row.snapshot_consensus_mae)) ++snapshots;
  }
  CHECK(snapshots == 3);
}

TEST_CASE("training rejects a mismatched architecture") {
  const SyntheticDataset ds = sample_dataset(quick_cohort(23, 120));
  Architecture arch = quick_arch();
  arch.feature_dim = 9;
  TrainHyper hyper;
  hyper.budget = 5;
  CHECK_THROWS_AS(train(ds, build_schedule(RegimeName::ConsensusOnly, 5), arch, hyper, 1),
                  ConfigError);
}

TEST_CASE("active losses trend down within their stages (3 seeds)") {
  TrainHyper hyper;
  hyper.budget = 3000;
  const Architecture arch;  // default 64x64
  const int window = 200;

  struct TermRef {
    const char* name;
    double LossBreakdown::* member;
  };
  const std::vector<std::vector<TermRef>> stage_terms = {
      {{"shape", &LossBreakdown::shape},
       {"consensus_ce", &LossBreakdown::consensus_ce},
       {"consensus_rmse", &LossBreakdown::consensus_rmse}},
      {{"rater_ce", &LossBreakdown::rater_ce}},
      {{"shape", &LossBreakdown::shape},
       {"consensus_ce", &LossBreakdown::consensus_ce},
       {"consensus_rmse", &LossBreakdown::consensus_rmse},
       {"rater_ce", &LossBreakdown::rater_ce},
       {"cons", &LossBreakdown::cons},
       {"var", &LossBreakdown::var}}};

  std::vector<TrainingHistory> histories;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    CohortConfig config = default_cohort_config();
    config.seed = seed;
    const SyntheticDataset ds = sample_dataset(config);
    histories.push_back(
        train(ds, build_schedule(RegimeName::ConsensusMultiVar, hyper.budget), arch, hyper, seed)
            .history);
  }
  for (int stage = 0; stage < 3; ++stage) {
    for (const TermRef& term : stage_terms[stage]) {
      std::vector<double> drops;
      for (const TrainingHistory& history : histories) {
        drops.push_back(smoothed(history, stage, true, window, term.member) -
                        smoothed(history, stage, false, window, term.member));
      }
      std::sort(drops.begin(), drops.end());
      CHECK_MESSAGE(drops[1] > 0.0, "stage ", stage, " term ", term.name,
                    " median drop ", drops[1]);
    }
  }
}
