#include "multirater/label_model.hpp"

#include <cmath>

#include "multirater/errors.hpp"

namespace multirater {

namespace {

void check_distribution(const Eigen::Ref<const Eigen::VectorXd>& dist) {
  if (dist.size() == 0) throw InputDomainError("distribution is empty");
  if ((dist.array() < -1e-12).any() || std::abs(dist.sum() - 1.0) > 1e-9) {
    throw InputDomainError("distribution entries must be in [0,1] and sum to 1");
  }
}

}  // namespace

ConsensusDistribution consensus_distribution(const Eigen::Ref<const Eigen::VectorXi>& labels,
                                             int n_classes) {
  if (labels.size() < 2) throw InputDomainError("consensus_distribution: need at least 2 raters");
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(n_classes);
  for (int r = 0; r < labels.size(); ++r) {
    const int k = labels[r];
    if (k < 0 || k >= n_classes) {
      throw InputDomainError("consensus_distribution: label out of [0, K)");
    }
    probs[k] += 1.0;
  }
  probs /= static_cast<double>(labels.size());
  return probs;
}

int majority_vote(const Eigen::Ref<const Eigen::VectorXd>& dist) {
  check_distribution(dist);
  int best = 0;
  for (int k = 1; k < dist.size(); ++k) {
    if (dist[k] > dist[best]) best = k;
  }
  return best;
}

double label_variance(const Eigen::Ref<const Eigen::VectorXd>& dist) {
  check_distribution(dist);
  return 1.0 - dist.squaredNorm();
}

double precision(const Eigen::Ref<const Eigen::VectorXd>& dist, double eps) {
  if (!(eps > 0.0)) throw InputDomainError("precision: eps must be > 0");
  return 1.0 / std::max(label_variance(dist), eps);
}

double consensus_sample_weight(const Eigen::Ref<const Eigen::VectorXd>& dist) {
  return std::exp(-label_variance(dist));
}

double rater_sample_weight(const Eigen::Ref<const Eigen::VectorXi>& labels, int rater,
                           int n_classes) {
  if (rater < 0 || rater >= labels.size()) {
    throw InputDomainError("rater_sample_weight: rater index out of range");
  }
  const ConsensusDistribution dist = consensus_distribution(labels, n_classes);
  return 1.0 / dist[labels[rater]];
}

ConfusionTensor observed_confusion(const std::vector<RatingRecord>& records, int n_classes) {
  if (records.empty()) throw InputDomainError("observed_confusion: empty dataset");
  const int n_raters = static_cast<int>(records.front().rater_labels.size());
  ConfusionTensor per_rater(n_raters, Eigen::MatrixXd::Zero(n_classes, n_classes));
  for (const RatingRecord& rec : records) {
    if (rec.rater_labels.size() != n_raters) {
      throw InputDomainError("observed_confusion: inconsistent rater count");
    }
    const ConsensusDistribution dist = consensus_distribution(rec.rater_labels, n_classes);
    for (int r = 0; r < n_raters; ++r) {
      per_rater[r].col(rec.rater_labels[r]) += dist;
    }
  }
  for (Eigen::MatrixXd& m : per_rater) m /= static_cast<double>(records.size());
  return per_rater;
}

}  // namespace multirater
