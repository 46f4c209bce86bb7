#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "multirater/label_model.hpp"
#include "multirater/shape_codec.hpp"

namespace multirater {

/// One simulated rater: a row-stochastic confusion matrix, plus an optional
/// second matrix the rater switches to at drift_point (fraction of the
/// dataset index).
struct RaterProfile {
  Eigen::MatrixXd base_confusion;
  std::optional<Eigen::MatrixXd> drift_confusion;
  double drift_point = 1.0;
};

struct CohortConfig {
  int n_samples = 3400;
  int n_test = 400;
  int n_raters = 6;
  int n_classes = 4;
  Eigen::VectorXd class_prior;  // empty -> default imbalanced prior
  double difficulty_alpha = 2.0;
  double difficulty_beta = 2.0;
  double noise_scale = 0.72;  // see default_cohort_config() for calibration
  int feature_dim = 16;       // 4 shape parameters + appearance vector
  std::uint64_t seed = 1;

  // Rater-population knobs: confusability spread across raters and how much
  // each rater's confusion structure deviates from the shared one.
  double rater_confusability_min = 0.15;
  double rater_confusability_max = 1.0;
  double rater_bias_strength = 0.65;
  double appearance_scale = 3.0;

  // Intra-rater drift (inconsistent labelling behaviour); empty = none.
  std::vector<int> drift_raters;
  std::vector<double> drift_strengths;  // parallel to drift_raters, in [0,1]
  double drift_point = 0.5;
};

/// Default configuration calibrated so the simulated cohort reproduces the
/// reference inter-rater statistics (mean pairwise agreement ~0.72).
CohortConfig default_cohort_config();

void validate(const CohortConfig& config);

struct SyntheticDataset {
  std::vector<RatingRecord> records;
  Eigen::MatrixXd features;          // n_samples x feature_dim
  std::vector<ShapeCode> shape_codes;
  std::vector<int> split;            // 0 = train, 1 = test
  int n_raters = 0;
  int n_classes = 0;

  int n_samples() const { return static_cast<int>(records.size()); }
  int feature_dim() const { return static_cast<int>(features.cols()); }
  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

/// Deterministic rater population for a config; drift matrices are attached
/// to the configured raters.
std::vector<RaterProfile> make_rater_profiles(const CohortConfig& config);

/// Fully deterministic in the config: per-sample randomness is keyed by
/// (seed, purpose, sample, rater), so regeneration is bit-identical and
/// order-independent.
SyntheticDataset sample_dataset(const CohortConfig& config);
SyntheticDataset sample_dataset(const CohortConfig& config,
                                const std::vector<RaterProfile>& raters);

/// Entry (r,s) = fraction of samples where raters r and s agree.
Eigen::MatrixXd measure_cohort_agreement(const SyntheticDataset& dataset);

double mean_offdiagonal(const Eigen::Ref<const Eigen::MatrixXd>& matrix);

/// Bisection on noise_scale until the measured mean pairwise agreement is
/// within 0.01 of the target, at the config's seed.
double calibrate_noise(double target_mean_agreement, const CohortConfig& config);

}  // namespace multirater
