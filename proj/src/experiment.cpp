#include "multirater/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include <json.hpp>

#include "multirater/errors.hpp"

namespace multirater {

using nlohmann::json;

namespace {

LossWeights weights_from_kv(const KeyValueConfig& kv, const std::string& prefix,
                            const LossWeights& base) {
  LossWeights w = base;
  w.w_ce = kv.get_double(prefix + "w_ce", base.w_ce);
  w.w_rmse = kv.get_double(prefix + "w_rmse", base.w_rmse);
  w.w_rater = kv.get_double(prefix + "w_rater", base.w_rater);
  w.w_cons = kv.get_double(prefix + "w_cons", base.w_cons);
  w.w_var = kv.get_double(prefix + "w_var", base.w_var);
  w.w_shape = kv.get_double(prefix + "w_shape", base.w_shape);
  if (w.w_ce < 0 || w.w_rmse < 0 || w.w_rater < 0 || w.w_cons < 0 || w.w_var < 0 ||
      w.w_shape < 0) {
    throw ConfigError("loss weights must be >= 0 (section `" + prefix + "`)");
  }
  return w;
}

std::map<std::string, std::string> cohort_echo(const CohortConfig& c) {
  std::map<std::string, std::string> kv;
  kv["cohort.n_samples"] = std::to_string(c.n_samples);
  kv["cohort.n_test"] = std::to_string(c.n_test);
  kv["cohort.n_raters"] = std::to_string(c.n_raters);
  kv["cohort.n_classes"] = std::to_string(c.n_classes);
  std::string prior;
  for (int i = 0; i < c.class_prior.size(); ++i) {
    if (i > 0) prior += ",";
    prior += format_double(c.class_prior[i]);
  }
  kv["cohort.class_prior"] = prior;
  kv["cohort.difficulty_alpha"] = format_double(c.difficulty_alpha);
  kv["cohort.difficulty_beta"] = format_double(c.difficulty_beta);
  kv["cohort.noise_scale"] = format_double(c.noise_scale);
  kv["cohort.feature_dim"] = std::to_string(c.feature_dim);
  kv["cohort.seed"] = std::to_string(c.seed);
  kv["cohort.rater_confusability_min"] = format_double(c.rater_confusability_min);
  kv["cohort.rater_confusability_max"] = format_double(c.rater_confusability_max);
  kv["cohort.rater_bias_strength"] = format_double(c.rater_bias_strength);
  kv["cohort.appearance_scale"] = format_double(c.appearance_scale);
  std::string drift, strengths;
  for (std::size_t i = 0; i < c.drift_raters.size(); ++i) {
    if (i > 0) drift += ",";
    drift += std::to_string(c.drift_raters[i]);
  }
  for (std::size_t i = 0; i < c.drift_strengths.size(); ++i) {
    if (i > 0) strengths += ",";
    strengths += format_double(c.drift_strengths[i]);
  }
  kv["cohort.drift_raters"] = drift;
  kv["cohort.drift_strengths"] = strengths;
  kv["cohort.drift_point"] = format_double(c.drift_point);
  return kv;
}

struct Fidelity {
  double kld = 0.0;
  double mae = 0.0;
};

// Consensus fidelity of one model against the consensus built from the
// active raters only, on the test split.
Fidelity consensus_fidelity(const ModelParams& params, const SyntheticDataset& dataset,
                            const std::vector<bool>& active) {
  std::vector<int> idx = dataset.test_indices();
  if (idx.empty()) throw InputDomainError("consensus_fidelity: dataset has no test split");
  const int n = static_cast<int>(idx.size());
  int n_active = 0;
  for (bool a : active) n_active += a ? 1 : 0;

  Eigen::MatrixXd x(n, dataset.feature_dim());
  Eigen::VectorXd target(n);
  for (int i = 0; i < n; ++i) {
    const RatingRecord& rec = dataset.records[idx[i]];
    x.row(i) = dataset.features.row(idx[i]);
    Eigen::VectorXi labels(n_active);
    int j = 0;
    for (int r = 0; r < dataset.n_raters; ++r) {
      if (active[r]) labels[j++] = rec.rater_labels[r];
    }
    target[i] = consensus_distribution(labels, dataset.n_classes)[0];
  }
  const Eigen::MatrixXd sm = softmax_rows(forward(params, x).consensus_logits);
  Fidelity out;
  out.kld = kld_histogram(target, sm.col(0), n_active + 1);
  out.mae = (target - sm.col(0)).cwiseAbs().mean();
  return out;
}

void ensure_parent_dir(const std::string& path) {
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

}  // namespace

LossWeights ExperimentConfig::weights_for(RegimeName name) const {
  const auto it = regime_weights.find(to_string(name));
  return it == regime_weights.end() ? weights : it->second;
}

ExperimentConfig experiment_from_kv(const KeyValueConfig& kv) {
  ExperimentConfig config;
  config.cohort = default_cohort_config();
  CohortConfig& c = config.cohort;
  c.n_samples = kv.get_int("cohort.n_samples", c.n_samples);
  c.n_test = kv.get_int("cohort.n_test", c.n_test);
  c.n_raters = kv.get_int("cohort.n_raters", c.n_raters);
  c.n_classes = kv.get_int("cohort.n_classes", c.n_classes);
  if (kv.has("cohort.class_prior")) {
    const std::vector<double> prior = kv.get_double_list("cohort.class_prior", {});
    c.class_prior = Eigen::Map<const Eigen::VectorXd>(prior.data(), prior.size());
  } else if (c.n_classes != c.class_prior.size()) {
    c.class_prior = Eigen::VectorXd::Constant(c.n_classes, 1.0 / c.n_classes);
  }
  c.difficulty_alpha = kv.get_double("cohort.difficulty_alpha", c.difficulty_alpha);
  c.difficulty_beta = kv.get_double("cohort.difficulty_beta", c.difficulty_beta);
  c.noise_scale = kv.get_double("cohort.noise_scale", c.noise_scale);
  c.feature_dim = kv.get_int("cohort.feature_dim", c.feature_dim);
  c.seed = kv.get_uint64("cohort.seed", c.seed);
  c.rater_confusability_min =
      kv.get_double("cohort.rater_confusability_min", c.rater_confusability_min);
  c.rater_confusability_max =
      kv.get_double("cohort.rater_confusability_max", c.rater_confusability_max);
  c.rater_bias_strength = kv.get_double("cohort.rater_bias_strength", c.rater_bias_strength);
  c.appearance_scale = kv.get_double("cohort.appearance_scale", c.appearance_scale);
  c.drift_raters = kv.get_int_list("cohort.drift_raters", c.drift_raters);
  c.drift_strengths = kv.get_double_list("cohort.drift_strengths", c.drift_strengths);
  c.drift_point = kv.get_double("cohort.drift_point", c.drift_point);
  try {
    validate(c);
  } catch (const InputDomainError& e) {
    throw ConfigError(e.what());
  }

  config.arch.feature_dim = c.feature_dim;
  config.arch.trunk_widths = kv.get_int_list("arch.trunk_widths", config.arch.trunk_widths);
  config.arch.n_classes = c.n_classes;
  config.arch.n_raters = c.n_raters;
  for (int w : config.arch.trunk_widths) {
    if (w < 1) throw ConfigError("arch.trunk_widths entries must be >= 1");
  }
  if (config.arch.trunk_widths.empty()) {
    throw ConfigError("arch.trunk_widths must name at least one layer");
  }

  config.hyper.lr = kv.get_double("hyper.lr", config.hyper.lr);
  config.hyper.batch_size = kv.get_int("hyper.batch_size", config.hyper.batch_size);
  config.hyper.budget = kv.get_int("hyper.budget", config.hyper.budget);
  config.hyper.snapshot_every = kv.get_int("hyper.snapshot_every", config.hyper.snapshot_every);
  if (config.hyper.lr <= 0 || config.hyper.batch_size < 1 || config.hyper.budget < 1) {
    throw ConfigError("hyper.lr must be > 0, hyper.batch_size and hyper.budget >= 1");
  }

  config.weights = weights_from_kv(kv, "losses.", LossWeights{});
  const std::string variant = kv.get_string("losses.cons_variant", "euclidean");
  if (variant == "euclidean") {
    config.cons_variant = ConsistencyVariant::Euclidean;
  } else if (variant == "mean_abs") {
    config.cons_variant = ConsistencyVariant::MeanAbsolute;
  } else {
    throw ConfigError("losses.cons_variant must be `euclidean` or `mean_abs`");
  }

  std::vector<std::string> regime_names;
  for (RegimeName r : all_regimes()) regime_names.push_back(to_string(r));
  const std::vector<std::string> requested = kv.get_string_list("regimes", regime_names);
  if (requested.empty()) throw ConfigError("regimes: need at least one regime");
  for (const std::string& name : requested) config.regimes.push_back(parse_regime(name));
  for (RegimeName r : all_regimes()) {
    const std::string prefix = "losses." + to_string(r) + ".";
    bool has_override = false;
    for (const auto& [key, value] : kv.entries()) {
      if (key.rfind(prefix, 0) == 0) has_override = true;
    }
    if (has_override) {
      config.regime_weights[to_string(r)] = weights_from_kv(kv, prefix, config.weights);
    }
  }

  config.flags.iqr_multiplier = kv.get_double("eval.iqr_multiplier", config.flags.iqr_multiplier);
  config.flags.min_gap = kv.get_double("eval.min_gap", config.flags.min_gap);

  std::vector<std::uint64_t> seeds;
  for (const std::string& s : kv.get_string_list("seeds", {"1"})) {
    try {
      seeds.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ConfigError("seeds: expected unsigned integers");
    }
  }
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
  config.seeds = seeds;
  config.output_dir = kv.get_string("output_dir", config.output_dir);
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path, bool env_overrides) {
  KeyValueConfig kv = KeyValueConfig::parse_file(path);
  if (env_overrides) kv.apply_env_overrides("MULTIRATER_");
  return experiment_from_kv(kv);
}

std::string run_simulate(const ExperimentConfig& config, const std::string& out_path) {
  ensure_parent_dir(out_path);
  const SyntheticDataset dataset = sample_dataset(config.cohort);
  write_dataset_jsonl(dataset, out_path);

  const Eigen::MatrixXd agreement = measure_cohort_agreement(dataset);
  double off_min = 1.0, off_max = 0.0;
  for (int r = 0; r < agreement.rows(); ++r) {
    for (int s = r + 1; s < agreement.cols(); ++s) {
      off_min = std::min(off_min, agreement(r, s));
      off_max = std::max(off_max, agreement(r, s));
    }
  }
  std::vector<int> class_counts(dataset.n_classes, 0);
  for (const RatingRecord& rec : dataset.records) ++class_counts[rec.true_class];

  json manifest;
  manifest["config"] = cohort_echo(config.cohort);
  manifest["seed"] = config.cohort.seed;
  manifest["summary"] = {
      {"n_samples", dataset.n_samples()},
      {"n_train", static_cast<int>(dataset.train_indices().size())},
      {"n_test", static_cast<int>(dataset.test_indices().size())},
      {"mean_pairwise_agreement", mean_offdiagonal(agreement)},
      {"min_pairwise_agreement", off_min},
      {"max_pairwise_agreement", off_max},
      {"class_counts", class_counts},
  };
  const std::string manifest_path = out_path + ".manifest.json";
  write_file(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

TrainOutputs run_train(const ExperimentConfig& config, const std::string& dataset_path,
                       RegimeName regime, std::uint64_t seed, const std::string& out_dir) {
  SyntheticDataset dataset = read_dataset_jsonl(dataset_path);
  dataset.n_classes = std::max(dataset.n_classes, config.arch.n_classes);
  Architecture arch = config.arch;
  arch.feature_dim = dataset.feature_dim();
  arch.n_classes = dataset.n_classes;
  arch.n_raters = dataset.n_raters;

  const Regime schedule =
      build_schedule(regime, config.hyper.budget, config.weights_for(regime),
                     config.cons_variant);
  const TrainResult result = train(dataset, schedule, arch, config.hyper, seed);

  std::filesystem::create_directories(out_dir);
  const std::string stem = to_string(regime) + "_seed" + std::to_string(seed);
  TrainOutputs outputs;
  outputs.checkpoint_path = (std::filesystem::path(out_dir) / (stem + ".ckpt")).string();
  outputs.history_path = (std::filesystem::path(out_dir) / (stem + "_history.csv")).string();
  write_checkpoint(outputs.checkpoint_path, result.params);
  write_history_csv(result.history, outputs.history_path);
  return outputs;
}

MetricReport run_evaluate(const std::string& checkpoint_path, const std::string& dataset_path,
                          const std::string& out_prefix, const EvalOptions& options,
                          const std::string& regime_label, std::uint64_t seed) {
  const ModelParams params = read_checkpoint(checkpoint_path);
  SyntheticDataset dataset = read_dataset_jsonl(dataset_path);
  const Architecture arch = architecture_of(params);
  if (arch.n_classes < dataset.n_classes) {
    throw ConfigError("run_evaluate: dataset has more classes than the checkpoint");
  }
  dataset.n_classes = arch.n_classes;
  const MetricReport report = evaluate_model(params, dataset, options);
  ensure_parent_dir(out_prefix + ".json");
  write_report_json(report, regime_label, seed, out_prefix + ".json");
  write_file(out_prefix + ".csv", report_csv_header(dataset.n_raters) + "\n" +
                                      report_csv_row(report, regime_label, seed) + "\n");
  return report;
}

void run_compare(const std::vector<std::string>& report_paths, const std::string& out_csv) {
  if (report_paths.size() < 2) throw ConfigError("compare: need at least 2 reports");
  struct Row {
    std::string regime;
    std::uint64_t seed;
    MetricReport report;
  };
  std::vector<Row> rows;
  for (const std::string& path : report_paths) {
    Row row;
    row.report = report_from_json(read_file(path), &row.regime, &row.seed);
    if (!rows.empty() &&
        rows.front().report.spearman_per_rater.size() != row.report.spearman_per_rater.size()) {
      throw ConfigError("compare: reports disagree on rater count (schema mismatch)");
    }
    rows.push_back(std::move(row));
  }

  // Rank columns: 1 = best. Ties keep input order so ranks stay a
  // permutation.
  struct Metric {
    const char* name;
    bool ascending;
    std::function<double(const MetricReport&)> get;
  };
  auto rater_mean = [](const MetricReport& r) {
    double sum = 0.0;
    int count = 0;
    for (const auto& s : r.spearman_per_rater) {
      if (s) {
        sum += *s;
        ++count;
      }
    }
    return count > 0 ? sum / count : 0.0;
  };
  const std::vector<Metric> metrics = {
      {"kld", true, [](const MetricReport& r) { return r.kld; }},
      {"mae_mean", true, [](const MetricReport& r) { return r.mae_mean; }},
      {"agreement_pearson", false,
       [](const MetricReport& r) { return r.agreement_pearson.value_or(0.0); }},
      {"agreement_mad", true, [](const MetricReport& r) { return r.agreement_mad; }},
      {"consistency_median", true, [](const MetricReport& r) { return r.consistency_median; }},
      {"spearman_rater_mean", false, rater_mean},
  };

  const int n_raters = static_cast<int>(rows.front().report.spearman_per_rater.size());
  std::string table = report_csv_header(n_raters);
  for (const Metric& m : metrics) table += std::string(",rank_") + m.name;
  table += "\n";

  std::vector<std::vector<int>> ranks(metrics.size(), std::vector<int>(rows.size()));
  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = metrics[mi].get(rows[a].report);
      const double vb = metrics[mi].get(rows[b].report);
      return metrics[mi].ascending ? va < vb : va > vb;
    });
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      ranks[mi][order[pos]] = static_cast<int>(pos) + 1;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    table += report_csv_row(rows[i].report, rows[i].regime, rows[i].seed);
    for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
      table += "," + std::to_string(ranks[mi][i]);
    }
    table += "\n";
  }
  ensure_parent_dir(out_csv);
  write_file(out_csv, table);
}

IntrospectResult run_introspect(const ExperimentConfig& config,
                                const std::string& checkpoint_path,
                                const std::string& dataset_path, std::uint64_t seed,
                                const std::string& out_path, bool retrain) {
  const ModelParams params = read_checkpoint(checkpoint_path);
  SyntheticDataset dataset = read_dataset_jsonl(dataset_path);
  const Architecture arch = architecture_of(params);
  dataset.n_classes = std::max(dataset.n_classes, arch.n_classes);

  EvalOptions options;
  options.flags = config.flags;
  const MetricReport report = evaluate_model(params, dataset, options);

  IntrospectResult result;
  result.flagged = report.flagged_raters;

  json out;
  out["flagged_raters"] = result.flagged;
  json medians = json::array();
  for (const AgreeDisagree& ad : report.agree_disagree) {
    std::vector<double> pooled = ad.agree_values;
    pooled.insert(pooled.end(), ad.disagree_values.begin(), ad.disagree_values.end());
    medians.push_back(pooled.empty() ? 0.0 : quantile(pooled, 0.5));
  }
  out["own_label_probability_medians"] = medians;

  if (result.flagged.empty() || !retrain) {
    out["action"] = result.flagged.empty() ? "no action" : "flagged only (retrain disabled)";
  } else {
    std::vector<bool> active(dataset.n_raters, true);
    for (int r : result.flagged) active[r] = false;

    const Fidelity before = consensus_fidelity(params, dataset, active);
    Architecture retrain_arch = arch;
    const Regime schedule = build_schedule(RegimeName::ConsensusMultiVar, config.hyper.budget,
                                           config.weights_for(RegimeName::ConsensusMultiVar),
                                           config.cons_variant);
    const TrainResult retrained = train(dataset, schedule, retrain_arch, config.hyper, seed, active);
    const Fidelity after = consensus_fidelity(retrained.params, dataset, active);

    result.kld_before = before.kld;
    result.mae_before = before.mae;
    result.kld_after = after.kld;
    result.mae_after = after.mae;
    result.retrained = true;

    const std::string retrained_path = out_path + ".retrained.ckpt";
    write_checkpoint(retrained_path, retrained.params);

    out["action"] = "retrained without flagged raters";
    out["excluded_from"] = "consensus average and all rater-side losses";
    out["before"] = {{"kld", before.kld}, {"mae", before.mae}};
    out["after"] = {{"kld", after.kld}, {"mae", after.mae}};
    out["retrained_checkpoint"] = retrained_path;
    // Post-exclusion fidelity observed on the original six-rater clinical
    // cohort, for orientation only; not a target for this dataset.
    out["reference"] = {{"kld", 0.202}, {"mae", 0.15}};
  }
  ensure_parent_dir(out_path);
  write_file(out_path, out.dump(2) + "\n");
  return result;
}

}  // namespace multirater
