#pragma once

#include <Eigen/Dense>
#include <vector>

namespace multirater {

/// Length-K probability vector of the average rating for one sample.
using ConsensusDistribution = Eigen::VectorXd;

/// One K x K joint-probability confusion matrix per rater; each sums to 1.
using ConfusionTensor = std::vector<Eigen::MatrixXd>;

/// One sample's categorical labels from R raters. true_class and difficulty
/// are simulator-side ground truth; true_class is -1 when unknown.
struct RatingRecord {
  int sample_id = 0;
  Eigen::VectorXi rater_labels;
  int true_class = -1;
  double difficulty = 0.0;
};

/// probs[k] = (raters voting k) / R.
ConsensusDistribution consensus_distribution(const Eigen::Ref<const Eigen::VectorXi>& labels,
                                             int n_classes);

/// argmax of the distribution; ties break toward the lowest class index.
int majority_vote(const Eigen::Ref<const Eigen::VectorXd>& dist);

/// var = 1 - sum_k p_k^2, in [0, 1 - 1/K].
double label_variance(const Eigen::Ref<const Eigen::VectorXd>& dist);

/// 1 / max(var, eps); the clamp removes the singularity at unanimity.
double precision(const Eigen::Ref<const Eigen::VectorXd>& dist, double eps = 1e-3);

/// exp(-var): downweights high-disagreement samples for consensus learning.
double consensus_sample_weight(const Eigen::Ref<const Eigen::VectorXd>& dist);

/// 1 / p_k where k is rater's own label; in [1, R] since the rater voted k.
double rater_sample_weight(const Eigen::Ref<const Eigen::VectorXi>& labels, int rater,
                           int n_classes);

/// per_rater[r](i,j) = mean_n consensus_n[i] * 1[label_nr == j].
ConfusionTensor observed_confusion(const std::vector<RatingRecord>& records, int n_classes);

}  // namespace multirater
