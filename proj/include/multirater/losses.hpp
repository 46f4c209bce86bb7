#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "multirater/label_model.hpp"
#include "multirater/network.hpp"

namespace multirater {

// Defaults picked on the calibrated synthetic cohort: the consensus head is
// trained mostly probabilistically (low w_ce, high w_rmse), which lets the
// consistency loss bind without distorting the consensus distribution.
struct LossWeights {
  double w_ce = 0.3;
  double w_rmse = 2.0;
  double w_rater = 1.0;
  double w_cons = 1.0;
  double w_var = 1.0;
  double w_shape = 1.0;
};

enum class LossTerm { Shape, ConsensusCe, ConsensusRmse, RaterCe, Cons, Var };
constexpr int kNumLossTerms = 6;

/// Which loss terms a training stage optimizes.
struct LossSet {
  bool shape = false;
  bool consensus_ce = false;
  bool consensus_rmse = false;
  bool rater_ce = false;
  bool cons = false;
  bool var = false;

  bool any() const { return shape || consensus_ce || consensus_rmse || rater_ce || cons || var; }
};

/// L_cons as printed is read as the Euclidean distance between the consensus
/// softmax and the mean rater softmax; a mean-absolute variant is selectable.
enum class ConsistencyVariant { Euclidean, MeanAbsolute };

struct StageObjective {
  LossSet active;
  LossWeights weights;
  ConsistencyVariant cons_variant = ConsistencyVariant::Euclidean;
};

/// Per-sample supervision, precomputed once per dataset. rater_weights carry
/// the 1/p_k weighting and are 0 for raters excluded from training.
struct SampleTargets {
  int majority_class = 0;
  Eigen::VectorXd consensus;      // K
  double consensus_weight = 1.0;  // exp(-var)
  Eigen::VectorXi rater_labels;   // R
  Eigen::VectorXd rater_weights;  // R
  Eigen::Vector4d shape = Eigen::Vector4d::Zero();
};

struct ScalarGrad {
  double value = 0.0;
  Eigen::VectorXd grad;
};

/// weight * -log softmax[target]; grad is w.r.t. the logits.
ScalarGrad consensus_ce_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax, int majority_class,
                             double sample_weight);

/// weight * sqrt(mean_k (softmax_k - target_k)^2); grad is w.r.t. the
/// softmax probabilities and is 0 at zero residual.
ScalarGrad consensus_rmse_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax,
                               const Eigen::Ref<const Eigen::VectorXd>& target,
                               double sample_weight);

/// Cross entropy against the rater's own label, 1/p_k weighted; grad w.r.t.
/// the logits.
ScalarGrad rater_ce_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax, int rater_label,
                         double rater_weight);

struct ConsistencyGrad {
  double value = 0.0;
  Eigen::VectorXd d_consensus;  // w.r.t. consensus softmax
  Eigen::MatrixXd d_raters;     // R x K, w.r.t. rater softmaxes
};

/// Distance between the consensus softmax and the mean of the rater
/// softmaxes; gradients are 0 at the nondifferentiable minimum.
ConsistencyGrad consistency_loss(const Eigen::Ref<const Eigen::VectorXd>& consensus_softmax,
                                 const Eigen::Ref<const Eigen::MatrixXd>& rater_softmaxes,
                                 ConsistencyVariant variant = ConsistencyVariant::Euclidean);

struct ConfusionGrad {
  double value = 0.0;
  std::vector<Eigen::MatrixXd> d_predicted;
};

/// L_var = sum over raters and cells of |observed - predicted|; subgradient
/// 0 at exact equality.
ConfusionGrad confusion_loss(const ConfusionTensor& observed, const ConfusionTensor& predicted);

/// Mean squared error over the 4 shape parameters; grad = (out - target)/2.
ScalarGrad shape_loss(const Eigen::Ref<const Eigen::Vector4d>& shape_out,
                      const Eigen::Ref<const Eigen::Vector4d>& target);

/// Per-term batch means of the active losses; inactive terms are exactly 0.
struct LossBreakdown {
  double shape = 0.0;
  double consensus_ce = 0.0;
  double consensus_rmse = 0.0;
  double rater_ce = 0.0;
  double cons = 0.0;
  double var = 0.0;
  double total = 0.0;
};

struct ObjectiveResult {
  LossBreakdown terms;
  HeadGradients head_grads;  // gradients of `terms.total` w.r.t. head outputs
};

/// Weighted sum of the stage's active terms averaged over the batch. The
/// predicted confusion tensor for L_var is built from this batch's
/// softmaxes; its observed counterpart from the batch's targets.
ObjectiveResult total_objective(const StageObjective& stage,
                                std::span<const SampleTargets> targets,
                                const ForwardTrace& trace);

}  // namespace multirater
