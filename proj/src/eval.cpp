#include "multirater/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "multirater/errors.hpp"

namespace multirater {

namespace {

constexpr double kBinSmoothing = 1e-6;

Eigen::VectorXd binned_histogram(const Eigen::Ref<const Eigen::VectorXd>& probs, int n_bins) {
  Eigen::VectorXd hist = Eigen::VectorXd::Constant(n_bins, kBinSmoothing);
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < 0.0 || p > 1.0) throw InputDomainError("kld_histogram: probability outside [0,1]");
    const int bin = std::min(static_cast<int>(p * n_bins), n_bins - 1);
    hist[bin] += 1.0;
  }
  return hist / hist.sum();
}

std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(const Eigen::Ref<const Eigen::VectorXd>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
    i = j + 1;
  }
  return ranks;
}

QuartileSummary summarize(const std::vector<double>& values) {
  QuartileSummary s;
  s.count = static_cast<int>(values.size());
  s.q1 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q3 = quantile(values, 0.75);
  return s;
}

}  // namespace

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InputDomainError("quantile: empty input");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double kld_histogram(const Eigen::Ref<const Eigen::VectorXd>& target_probs,
                     const Eigen::Ref<const Eigen::VectorXd>& predicted_probs, int n_bins) {
  if (target_probs.size() == 0 || predicted_probs.size() == 0) {
    throw InputDomainError("kld_histogram: empty inputs");
  }
  if (n_bins < 2) throw InputDomainError("kld_histogram: need at least 2 bins");
  const Eigen::VectorXd t = binned_histogram(target_probs, n_bins);
  const Eigen::VectorXd p = binned_histogram(predicted_probs, n_bins);
  double kld = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (t[b] > 0.0) kld += t[b] * std::log(t[b] / p[b]);
  }
  return std::max(kld, 0.0);
}

std::pair<double, double> mae_prob(const Eigen::Ref<const Eigen::MatrixXd>& target_dists,
                                   const Eigen::Ref<const Eigen::MatrixXd>& predicted_dists) {
  if (target_dists.rows() != predicted_dists.rows() || target_dists.rows() == 0) {
    throw ContractViolation("mae_prob: length mismatch or empty input");
  }
  const Eigen::ArrayXd err = (target_dists.col(0) - predicted_dists.col(0)).array().abs();
  const double mean = err.mean();
  const double sd = std::sqrt((err - mean).square().mean());
  return {mean, sd};
}

Eigen::MatrixXd pairwise_agreement(const Eigen::Ref<const Eigen::MatrixXi>& labels) {
  const int n = static_cast<int>(labels.rows());
  const int r = static_cast<int>(labels.cols());
  if (n < 1) throw InputDomainError("pairwise_agreement: need at least one sample");
  Eigen::MatrixXd agreement = Eigen::MatrixXd::Identity(r, r);
  for (int a = 0; a < r; ++a) {
    for (int b = a + 1; b < r; ++b) {
      const double frac =
          (labels.col(a).array() == labels.col(b).array()).cast<double>().mean();
      agreement(a, b) = agreement(b, a) = frac;
    }
  }
  return agreement;
}

MatrixSimilarity matrix_similarity(const Eigen::Ref<const Eigen::MatrixXd>& a,
                                   const Eigen::Ref<const Eigen::MatrixXd>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols()) {
    throw ContractViolation("matrix_similarity: shape mismatch");
  }
  std::vector<double> xs, ys;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = i + 1; j < a.cols(); ++j) {
      xs.push_back(a(i, j));
      ys.push_back(b(i, j));
    }
  }
  if (xs.empty()) throw ContractViolation("matrix_similarity: matrix too small");
  MatrixSimilarity out;
  out.pearson = pearson(xs, ys);
  double mad = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) mad += std::abs(xs[i] - ys[i]);
  out.mad = mad / static_cast<double>(xs.size());
  return out;
}

ConsistencySummary consistency_error(const Eigen::Ref<const Eigen::MatrixXd>& consensus_softmax,
                                     const std::vector<Eigen::MatrixXd>& rater_softmax) {
  if (rater_softmax.empty()) throw ContractViolation("consistency_error: no rater outputs");
  const Eigen::Index n = consensus_softmax.rows();
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, consensus_softmax.cols());
  for (const Eigen::MatrixXd& sm : rater_softmax) {
    if (sm.rows() != n || sm.cols() != consensus_softmax.cols()) {
      throw ContractViolation("consistency_error: shape mismatch");
    }
    mean += sm;
  }
  mean /= static_cast<double>(rater_softmax.size());
  ConsistencySummary out;
  out.per_sample = (consensus_softmax - mean).rowwise().norm();
  std::vector<double> values(out.per_sample.data(), out.per_sample.data() + n);
  out.median = quantile(values, 0.5);
  out.iqr = quantile(values, 0.75) - quantile(values, 0.25);
  return out;
}

std::optional<double> spearman(const Eigen::Ref<const Eigen::VectorXd>& x,
                               const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != y.size()) throw ContractViolation("spearman: length mismatch");
  if (x.size() < 3) throw InputDomainError("spearman: need at least 3 points");
  return pearson(average_ranks(x), average_ranks(y));
}

std::vector<AgreeDisagree> agree_disagree_split(
    const std::vector<Eigen::MatrixXd>& rater_softmax,
    const Eigen::Ref<const Eigen::MatrixXi>& observed,
    const Eigen::Ref<const Eigen::VectorXi>& majority) {
  const int n = static_cast<int>(observed.rows());
  const int n_raters = static_cast<int>(observed.cols());
  if (static_cast<int>(rater_softmax.size()) != n_raters || majority.size() != n) {
    throw ContractViolation("agree_disagree_split: shape mismatch");
  }
  std::vector<AgreeDisagree> out(n_raters);
  for (int r = 0; r < n_raters; ++r) {
    for (int i = 0; i < n; ++i) {
      const double own = rater_softmax[r](i, observed(i, r));
      if (observed(i, r) == majority[i]) {
        out[r].agree_values.push_back(own);
      } else {
        out[r].disagree_values.push_back(own);
      }
    }
    if (!out[r].agree_values.empty()) out[r].agree = summarize(out[r].agree_values);
    if (!out[r].disagree_values.empty()) out[r].disagree = summarize(out[r].disagree_values);
  }
  return out;
}

std::vector<int> flag_inconsistent_raters(const std::vector<Eigen::MatrixXd>& rater_softmax,
                                          const Eigen::Ref<const Eigen::MatrixXi>& observed,
                                          const FlagConfig& config) {
  const int n_raters = static_cast<int>(observed.cols());
  std::vector<double> medians(n_raters);
  for (int r = 0; r < n_raters; ++r) {
    std::vector<double> own;
    own.reserve(observed.rows());
    for (int i = 0; i < observed.rows(); ++i) own.push_back(rater_softmax[r](i, observed(i, r)));
    medians[r] = quantile(own, 0.5);
  }

  std::vector<int> flagged;
  std::vector<bool> is_flagged(n_raters, false);
  for (;;) {
    std::vector<double> pool;
    for (int r = 0; r < n_raters; ++r) {
      if (!is_flagged[r]) pool.push_back(medians[r]);
    }
    if (pool.size() < 3) break;
    const double center = quantile(pool, 0.5);
    const double iqr = quantile(pool, 0.75) - quantile(pool, 0.25);
    const double cutoff = center - std::max(config.iqr_multiplier * iqr, config.min_gap);

    int worst = -1;
    for (int r = 0; r < n_raters; ++r) {
      if (is_flagged[r]) continue;
      if (medians[r] < cutoff && (worst == -1 || medians[r] < medians[worst])) worst = r;
    }
    if (worst == -1) break;
    is_flagged[worst] = true;
    flagged.push_back(worst);
  }
  std::sort(flagged.begin(), flagged.end());
  return flagged;
}

MetricReport evaluate_model(const ModelParams& params, const SyntheticDataset& dataset,
                            const EvalOptions& options) {
  const Architecture arch = architecture_of(params);
  if (arch.feature_dim != dataset.feature_dim()) {
    throw ConfigError("evaluate_model: checkpoint feature_dim does not match the dataset");
  }
  if (arch.n_raters != dataset.n_raters) {
    throw ConfigError("evaluate_model: checkpoint rater count does not match the dataset");
  }
  std::vector<int> idx =
      options.test_split_only ? dataset.test_indices() : dataset.train_indices();
  if (idx.empty()) {
    idx.resize(dataset.n_samples());
    std::iota(idx.begin(), idx.end(), 0);
  }
  const int n = static_cast<int>(idx.size());
  const int k = arch.n_classes;

  Eigen::MatrixXd x(n, arch.feature_dim);
  Eigen::MatrixXd target_dists(n, k);
  Eigen::MatrixXi observed(n, dataset.n_raters);
  Eigen::VectorXi majority(n);
  Eigen::VectorXd prec(n);
  for (int i = 0; i < n; ++i) {
    const RatingRecord& rec = dataset.records[idx[i]];
    x.row(i) = dataset.features.row(idx[i]);
    const ConsensusDistribution dist = consensus_distribution(rec.rater_labels, k);
    target_dists.row(i) = dist.transpose();
    observed.row(i) = rec.rater_labels.transpose();
    majority[i] = majority_vote(dist);
    prec[i] = precision(dist);
  }

  const ForwardTrace trace = forward(params, x);
  const Eigen::MatrixXd consensus_sm = softmax_rows(trace.consensus_logits);
  std::vector<Eigen::MatrixXd> rater_sm;
  rater_sm.reserve(dataset.n_raters);
  for (const auto& logits : trace.rater_logits) rater_sm.push_back(softmax_rows(logits));

  MetricReport report;
  report.n_eval_samples = n;
  const int bins = options.kld_bins > 0 ? options.kld_bins : dataset.n_raters + 1;
  report.kld = kld_histogram(target_dists.col(0), consensus_sm.col(0), bins);
  std::tie(report.mae_mean, report.mae_sd) = mae_prob(target_dists, consensus_sm);

  Eigen::MatrixXi predicted_labels(n, dataset.n_raters);
  for (int r = 0; r < dataset.n_raters; ++r) {
    for (int i = 0; i < n; ++i) {
      int arg = 0;
      for (int c = 1; c < k; ++c) {
        if (rater_sm[r](i, c) > rater_sm[r](i, arg)) arg = c;
      }
      predicted_labels(i, r) = arg;
    }
  }
  report.agreement_observed = pairwise_agreement(observed);
  report.agreement_predicted = pairwise_agreement(predicted_labels);
  const MatrixSimilarity sim =
      matrix_similarity(report.agreement_observed, report.agreement_predicted);
  report.agreement_pearson = sim.pearson;
  report.agreement_mad = sim.mad;

  const ConsistencySummary consistency = consistency_error(consensus_sm, rater_sm);
  report.consistency_median = consistency.median;
  report.consistency_iqr = consistency.iqr;

  for (int r = 0; r < dataset.n_raters; ++r) {
    Eigen::VectorXd own(n);
    for (int i = 0; i < n; ++i) own[i] = rater_sm[r](i, observed(i, r));
    report.spearman_per_rater.push_back(spearman(own, prec));
  }
  report.spearman_consensus = spearman(consensus_sm.col(0), prec);

  report.agree_disagree = agree_disagree_split(rater_sm, observed, majority);
  report.flagged_raters = flag_inconsistent_raters(rater_sm, observed, options.flags);
  return report;
}

}  // namespace multirater
