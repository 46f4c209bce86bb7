#include "multirater/cohort_sim.hpp"

#include <cmath>

#include "multirater/errors.hpp"
#include "multirater/rng.hpp"

namespace multirater {

namespace {

// Stream purposes; part of the determinism contract.
enum StreamTag : std::uint64_t {
  kClassDraw = 1,
  kDifficultyDraw,
  kCloudDraw,
  kAppearanceDraw,
  kLabelDraw,
  kRaterBias,
  kRaterDriftBias,
  kClassMean,
};

// Shared confusability structure: which classes raters mix up when unsure.
// The four-class layout is linear-lesion / cavity / undetermined / nothing,
// with most confusion flowing through the undetermined class.
Eigen::MatrixXd shared_confusion_structure(int n_classes) {
  if (n_classes == 4) {
    Eigen::MatrixXd s(4, 4);
    s << 0.15, 0.35, 0.40, 0.10,  //
        0.45, 0.10, 0.35, 0.10,   //
        0.35, 0.25, 0.20, 0.20,   //
        0.10, 0.05, 0.35, 0.50;
    return s;
  }
  Eigen::MatrixXd s(n_classes, n_classes);
  for (int i = 0; i < n_classes; ++i) {
    for (int j = 0; j < n_classes; ++j) s(i, j) = std::exp(-0.7 * std::abs(i - j));
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

Eigen::MatrixXd dirichlet_rows(RandomStream& stream, int n_classes, double concentration) {
  Eigen::MatrixXd rows(n_classes, n_classes);
  for (int i = 0; i < n_classes; ++i) {
    for (int j = 0; j < n_classes; ++j) rows(i, j) = stream.gamma(concentration);
    const double sum = rows.row(i).sum();
    rows.row(i) = sum > 0.0 ? (rows.row(i) / sum).eval()
                            : Eigen::RowVectorXd::Constant(n_classes, 1.0 / n_classes).eval();
  }
  return rows;
}

Eigen::MatrixXd rater_confusion(const CohortConfig& config, double confusability,
                                const Eigen::MatrixXd& structure,
                                const Eigen::MatrixXd& bias) {
  const int k = config.n_classes;
  const Eigen::MatrixXd mixed =
      (1.0 - config.rater_bias_strength) * structure + config.rater_bias_strength * bias;
  return (1.0 - confusability) * Eigen::MatrixXd::Identity(k, k) + confusability * mixed;
}

// Class-conditional ellipsoid half-lengths: elongated for the linear-lesion
// class, blob for the cavity class, intermediate / irregular for the rest.
Eigen::Vector3d cloud_half_lengths(int true_class, RandomStream& stream) {
  auto unif = [&](double lo, double hi) { return lo + (hi - lo) * stream.uniform(); };
  switch (true_class) {
    case 0: {
      const double a = unif(1.5, 3.0);
      const double b = unif(0.3, 0.6);
      return {a, b, b};
    }
    case 1: {
      const double a = unif(0.8, 1.4);
      return {a, a, a};
    }
    case 2: {
      const double a = unif(1.0, 2.0);
      const double b = unif(0.5, 0.9);
      return {a, b, b};
    }
    default:
      return {unif(0.3, 1.0), unif(0.3, 1.0), unif(0.3, 1.0)};
  }
}

PointCloud sample_cloud(int true_class, RandomStream& stream) {
  constexpr int kPoints = 24;
  const Eigen::Vector3d half = cloud_half_lengths(true_class, stream);

  // Random orientation from a QR factorization of a Gaussian matrix.
  Eigen::Matrix3d g;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) g(i, j) = stream.normal();
  }
  const Eigen::Matrix3d q = Eigen::HouseholderQR<Eigen::Matrix3d>(g).householderQ();

  PointCloud cloud(kPoints, 3);
  for (int p = 0; p < kPoints; ++p) {
    const Eigen::Vector3d local(half[0] * stream.normal(), half[1] * stream.normal(),
                                half[2] * stream.normal());
    cloud.row(p) = (q * local).transpose();
  }
  return cloud;
}

std::vector<Eigen::VectorXd> class_means(const CohortConfig& config) {
  std::vector<Eigen::VectorXd> means;
  const int dim = config.feature_dim - 4;
  for (int c = 0; c < config.n_classes; ++c) {
    RandomStream stream = RandomStream::derive(config.seed, {kClassMean, static_cast<std::uint64_t>(c)});
    Eigen::VectorXd mu(dim);
    for (int j = 0; j < dim; ++j) mu[j] = stream.normal();
    const double norm = mu.norm();
    if (norm > 0.0) mu *= config.appearance_scale / norm;
    means.push_back(mu);
  }
  return means;
}

Eigen::VectorXd default_class_prior() {
  // 100:1 ratio between the first two classes; remaining mass split between
  // undetermined and nothing so the prior sums to exactly 1.
  Eigen::VectorXd prior(4);
  prior << 0.62, 0.0062, 0.124, 0.2498;
  return prior;
}

}  // namespace

CohortConfig default_cohort_config() {
  CohortConfig config;
  config.class_prior = default_class_prior();
  // Frozen from calibrate_noise(0.72, .) with the knobs below; yields mean
  // pairwise agreement ~0.71-0.75 with per-pair spread ~[0.58, 0.91] over
  // seeds.
  config.noise_scale = 0.72;
  config.rater_confusability_min = 0.15;
  config.rater_confusability_max = 1.0;
  config.rater_bias_strength = 0.65;
  return config;
}

void validate(const CohortConfig& config) {
  if (config.n_samples < 1) throw InputDomainError("cohort: n_samples must be >= 1");
  if (config.n_test < 0 || config.n_test >= config.n_samples) {
    throw InputDomainError("cohort: n_test must be in [0, n_samples)");
  }
  if (config.n_raters < 2) throw InputDomainError("cohort: n_raters must be >= 2");
  if (config.n_classes < 2) throw InputDomainError("cohort: n_classes must be >= 2");
  if (config.class_prior.size() != config.n_classes ||
      std::abs(config.class_prior.sum() - 1.0) > 1e-9 ||
      (config.class_prior.array() < 0.0).any()) {
    throw InputDomainError("cohort: class_prior must be a length-K distribution");
  }
  if (!(config.difficulty_alpha > 0.0) || !(config.difficulty_beta > 0.0)) {
    throw InputDomainError("cohort: difficulty Beta parameters must be > 0");
  }
  if (config.noise_scale < 0.0 || config.noise_scale > 1.0) {
    throw InputDomainError("cohort: noise_scale must be in [0,1]");
  }
  if (config.feature_dim < 5) {
    throw InputDomainError("cohort: feature_dim must be >= 5 (4 shape parameters + appearance)");
  }
  if (config.drift_point < 0.0 || config.drift_point > 1.0) {
    throw InputDomainError("cohort: drift_point must be in [0,1]");
  }
  if (!config.drift_strengths.empty() &&
      config.drift_strengths.size() != config.drift_raters.size()) {
    throw InputDomainError("cohort: drift_strengths must match drift_raters");
  }
  for (int r : config.drift_raters) {
    if (r < 0 || r >= config.n_raters) {
      throw InputDomainError("cohort: drift rater index out of range");
    }
  }
}

std::vector<RaterProfile> make_rater_profiles(const CohortConfig& config) {
  validate(config);
  const Eigen::MatrixXd structure = shared_confusion_structure(config.n_classes);
  std::vector<RaterProfile> raters;
  raters.reserve(config.n_raters);
  for (int r = 0; r < config.n_raters; ++r) {
    const double t = config.n_raters == 1 ? 0.5
                                          : static_cast<double>(r) /
                                                static_cast<double>(config.n_raters - 1);
    const double confusability = config.rater_confusability_min +
                                 t * (config.rater_confusability_max -
                                      config.rater_confusability_min);
    RandomStream bias_stream =
        RandomStream::derive(config.seed, {kRaterBias, static_cast<std::uint64_t>(r)});
    const Eigen::MatrixXd bias = dirichlet_rows(bias_stream, config.n_classes, 0.5);
    RaterProfile profile;
    profile.base_confusion = rater_confusion(config, confusability, structure, bias);
    raters.push_back(std::move(profile));
  }
  for (std::size_t d = 0; d < config.drift_raters.size(); ++d) {
    const int r = config.drift_raters[d];
    const double strength = config.drift_strengths.empty() ? 1.0 : config.drift_strengths[d];
    // Drift is a systematic re-biasing of the rater's uncertain calls toward
    // the last ("nothing") class: a changed decision threshold for what
    // counts as a lesion at all, not fresh random noise.
    const int k = config.n_classes;
    const int drift_class = k - 1;
    Eigen::MatrixXd focused = Eigen::MatrixXd::Constant(k, k, 0.05);
    focused.col(drift_class).setConstant(1.0 - 0.05 * (k - 1));
    // A drifted rater does not merely re-mix old tendencies: they act on the
    // new bias decisively, so the switched matrix is nearly all structure.
    constexpr double kDriftConfusability = 0.9;
    const Eigen::MatrixXd alt = (1.0 - kDriftConfusability) * Eigen::MatrixXd::Identity(k, k) +
                                kDriftConfusability * focused;
    raters[r].drift_confusion =
        (1.0 - strength) * raters[r].base_confusion + strength * alt;
    raters[r].drift_point = config.drift_point;
  }
  return raters;
}

SyntheticDataset sample_dataset(const CohortConfig& config) {
  return sample_dataset(config, make_rater_profiles(config));
}

SyntheticDataset sample_dataset(const CohortConfig& config,
                                const std::vector<RaterProfile>& raters) {
  validate(config);
  if (static_cast<int>(raters.size()) != config.n_raters) {
    throw InputDomainError("sample_dataset: rater profile count mismatch");
  }
  for (const RaterProfile& rp : raters) {
    if (rp.base_confusion.rows() != config.n_classes ||
        (rp.base_confusion.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-9) {
      throw InputDomainError("sample_dataset: rater confusion must be KxK row-stochastic");
    }
  }

  const int n = config.n_samples;
  const int k = config.n_classes;
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(k, k);
  const std::vector<Eigen::VectorXd> means = class_means(config);

  SyntheticDataset ds;
  ds.n_raters = config.n_raters;
  ds.n_classes = k;
  ds.records.reserve(n);
  ds.shape_codes.reserve(n);
  ds.features.resize(n, config.feature_dim);
  ds.split.resize(n);

  for (int i = 0; i < n; ++i) {
    const auto id = static_cast<std::uint64_t>(i);
    RandomStream class_stream = RandomStream::derive(config.seed, {kClassDraw, id});
    RandomStream diff_stream = RandomStream::derive(config.seed, {kDifficultyDraw, id});
    RandomStream cloud_stream = RandomStream::derive(config.seed, {kCloudDraw, id});
    RandomStream app_stream = RandomStream::derive(config.seed, {kAppearanceDraw, id});

    RatingRecord rec;
    rec.sample_id = i;
    rec.true_class = class_stream.categorical(config.class_prior);
    rec.difficulty = diff_stream.beta(config.difficulty_alpha, config.difficulty_beta);

    const ShapeCode code = encode_shape(sample_cloud(rec.true_class, cloud_stream));
    ds.shape_codes.push_back(code);
    ds.features.row(i).head<4>() = code.as_vector().transpose();
    const int adim = config.feature_dim - 4;
    for (int j = 0; j < adim; ++j) {
      ds.features(i, 4 + j) =
          (1.0 - rec.difficulty) * means[rec.true_class][j] + app_stream.normal();
    }

    rec.rater_labels.resize(config.n_raters);
    const double progress = static_cast<double>(i) / static_cast<double>(n);
    for (int r = 0; r < config.n_raters; ++r) {
      const RaterProfile& rp = raters[r];
      const Eigen::MatrixXd& confusion =
          rp.drift_confusion && progress >= rp.drift_point ? *rp.drift_confusion
                                                           : rp.base_confusion;
      const double mix = rec.difficulty * config.noise_scale;
      const Eigen::VectorXd row =
          (1.0 - mix) * identity.row(rec.true_class) + mix * confusion.row(rec.true_class);
      RandomStream label_stream =
          RandomStream::derive(config.seed, {kLabelDraw, id, static_cast<std::uint64_t>(r)});
      rec.rater_labels[r] = label_stream.categorical(row);
    }

    // Evenly spaced test assignment: exactly n_test test samples.
    const long long lo = static_cast<long long>(i) * config.n_test / n;
    const long long hi = static_cast<long long>(i + 1) * config.n_test / n;
    ds.split[i] = hi > lo ? 1 : 0;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::vector<int> SyntheticDataset::train_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < n_samples(); ++i) {
    if (split[i] == 0) idx.push_back(i);
  }
  return idx;
}

std::vector<int> SyntheticDataset::test_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < n_samples(); ++i) {
    if (split[i] == 1) idx.push_back(i);
  }
  return idx;
}

Eigen::MatrixXd measure_cohort_agreement(const SyntheticDataset& dataset) {
  if (dataset.records.empty()) throw InputDomainError("measure_cohort_agreement: empty dataset");
  const int n_raters = dataset.n_raters;
  Eigen::MatrixXd agreement = Eigen::MatrixXd::Identity(n_raters, n_raters);
  for (int r = 0; r < n_raters; ++r) {
    for (int s = r + 1; s < n_raters; ++s) {
      int matches = 0;
      for (const RatingRecord& rec : dataset.records) {
        if (rec.rater_labels[r] == rec.rater_labels[s]) ++matches;
      }
      agreement(r, s) = agreement(s, r) =
          static_cast<double>(matches) / static_cast<double>(dataset.records.size());
    }
  }
  return agreement;
}

double mean_offdiagonal(const Eigen::Ref<const Eigen::MatrixXd>& matrix) {
  const int n = static_cast<int>(matrix.rows());
  double sum = 0.0;
  int count = 0;
  for (int r = 0; r < n; ++r) {
    for (int s = r + 1; s < n; ++s) {
      sum += matrix(r, s);
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

double calibrate_noise(double target_mean_agreement, const CohortConfig& config) {
  validate(config);
  const double chance = 1.0 / static_cast<double>(config.n_classes);
  auto measure = [&](double noise) {
    CohortConfig probe = config;
    probe.noise_scale = noise;
    return mean_offdiagonal(measure_cohort_agreement(sample_dataset(probe)));
  };
  if (target_mean_agreement >= 1.0 - 1e-12) return 0.0;
  const double floor = measure(1.0);
  const double ceiling = measure(0.0);  // 1.0 by construction
  if (target_mean_agreement <= chance || target_mean_agreement < floor - 0.01 ||
      target_mean_agreement > ceiling) {
    throw CalibrationFailure("calibrate_noise: target agreement unattainable", floor, ceiling);
  }
  double lo = 0.0;      // high agreement
  double hi = 1.0;      // low agreement
  double mid = 0.5;
  for (int iter = 0; iter < 60; ++iter) {
    mid = 0.5 * (lo + hi);
    const double measured = measure(mid);
    if (std::abs(measured - target_mean_agreement) <= 0.01) return mid;
    if (measured > target_mean_agreement) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw CalibrationFailure("calibrate_noise: bisection did not settle within 0.01", floor,
                           ceiling);
}

}  // namespace multirater
