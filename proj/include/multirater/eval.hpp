#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "multirater/cohort_sim.hpp"
#include "multirater/network.hpp"

namespace multirater {

struct QuartileSummary {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  int count = 0;
};

/// Per-rater predicted probability of the rater's own label, partitioned by
/// agreement with the majority vote. A side can be absent (e.g. a rater who
/// never disagrees).
struct AgreeDisagree {
  std::optional<QuartileSummary> agree;
  std::optional<QuartileSummary> disagree;
  std::vector<double> agree_values;
  std::vector<double> disagree_values;
};

struct FlagConfig {
  double iqr_multiplier = 1.5;
  // A rater is only flagged when it also sits at least this far below the
  // median-of-medians; guards against flagging inside a tight cohort.
  double min_gap = 0.05;
};

struct MatrixSimilarity {
  std::optional<double> pearson;  // absent when an input has zero variance
  double mad = 0.0;
};

struct ConsistencySummary {
  double median = 0.0;
  double iqr = 0.0;
  Eigen::VectorXd per_sample;
};

/// Everything reported for one trained model on one dataset split.
struct MetricReport {
  double kld = 0.0;
  double mae_mean = 0.0;
  double mae_sd = 0.0;
  Eigen::MatrixXd agreement_observed;
  Eigen::MatrixXd agreement_predicted;
  std::optional<double> agreement_pearson;
  double agreement_mad = 0.0;
  double consistency_median = 0.0;
  double consistency_iqr = 0.0;
  std::vector<std::optional<double>> spearman_per_rater;
  std::optional<double> spearman_consensus;
  std::vector<AgreeDisagree> agree_disagree;
  std::vector<int> flagged_raters;
  int n_eval_samples = 0;
};

/// Linear-interpolation quantile of a copy of the values (R type 7).
double quantile(std::vector<double> values, double q);

/// KL(target || predicted) between binned histograms of per-sample
/// probabilities on [0,1]; additive 1e-6 smoothing per bin.
double kld_histogram(const Eigen::Ref<const Eigen::VectorXd>& target_probs,
                     const Eigen::Ref<const Eigen::VectorXd>& predicted_probs, int n_bins = 7);

/// Mean and (population) sd of the per-sample absolute error on the first
/// class's probability.
std::pair<double, double> mae_prob(const Eigen::Ref<const Eigen::MatrixXd>& target_dists,
                                   const Eigen::Ref<const Eigen::MatrixXd>& predicted_dists);

/// Fraction of exact label matches per rater pair; unit diagonal.
Eigen::MatrixXd pairwise_agreement(const Eigen::Ref<const Eigen::MatrixXi>& labels);

/// Pearson and mean absolute difference over strict upper-triangle entries.
MatrixSimilarity matrix_similarity(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                   const Eigen::Ref<const Eigen::MatrixXd>& b);

/// Per-sample Euclidean distance between the consensus softmax and the mean
/// rater softmax, summarized by median and interquartile range.
ConsistencySummary consistency_error(const Eigen::Ref<const Eigen::MatrixXd>& consensus_softmax,
                                     const std::vector<Eigen::MatrixXd>& rater_softmax);

/// Rank correlation with average-rank tie handling; absent for constant
/// inputs.
std::optional<double> spearman(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& y);

std::vector<AgreeDisagree> agree_disagree_split(const std::vector<Eigen::MatrixXd>& rater_softmax,
                                                const Eigen::Ref<const Eigen::MatrixXi>& observed,
                                                const Eigen::Ref<const Eigen::VectorXi>& majority);

/// Flags raters whose median own-label probability falls more than
/// iqr_multiplier * IQR (and min_gap) below the median of the unflagged
/// raters' medians. Applied iteratively, lowest first, so one strong
/// outlier cannot mask a second one.
std::vector<int> flag_inconsistent_raters(const std::vector<Eigen::MatrixXd>& rater_softmax,
                                          const Eigen::Ref<const Eigen::MatrixXi>& observed,
                                          const FlagConfig& config = {});

struct EvalOptions {
  int kld_bins = 0;  // 0 -> n_raters + 1
  FlagConfig flags;
  bool test_split_only = true;
};

/// Runs the model over the dataset's evaluation split and assembles the
/// full report.
MetricReport evaluate_model(const ModelParams& params, const SyntheticDataset& dataset,
                            const EvalOptions& options = {});

}  // namespace multirater
