#include "multirater/losses.hpp"

#include <cmath>

#include "multirater/errors.hpp"

namespace multirater {

namespace {

constexpr double kLogClamp = 1e-12;

void check_probs(const Eigen::Ref<const Eigen::VectorXd>& p, const char* who) {
  if ((p.array() < -1e-12).any() || std::abs(p.sum() - 1.0) > 1e-6) {
    throw InputDomainError(std::string(who) + ": not a probability vector");
  }
}

}  // namespace

ScalarGrad consensus_ce_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax, int majority_class,
                             double sample_weight) {
  check_probs(softmax, "consensus_ce_loss");
  if (majority_class < 0 || majority_class >= softmax.size()) {
    throw InputDomainError("consensus_ce_loss: class index out of range");
  }
  if (sample_weight < 0.0) throw InputDomainError("consensus_ce_loss: negative weight");
  ScalarGrad out;
  out.value = sample_weight * -std::log(std::max(softmax[majority_class], kLogClamp));
  out.grad = sample_weight * softmax;
  out.grad[majority_class] -= sample_weight;
  return out;
}

ScalarGrad consensus_rmse_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax,
                               const Eigen::Ref<const Eigen::VectorXd>& target,
                               double sample_weight) {
  check_probs(softmax, "consensus_rmse_loss");
  check_probs(target, "consensus_rmse_loss");
  const Eigen::Index k = softmax.size();
  const Eigen::VectorXd diff = softmax - target;
  const double rmse = std::sqrt(diff.squaredNorm() / static_cast<double>(k));
  ScalarGrad out;
  out.value = sample_weight * rmse;
  out.grad = rmse == 0.0 ? Eigen::VectorXd::Zero(k).eval()
                         : (sample_weight / (static_cast<double>(k) * rmse) * diff).eval();
  return out;
}

ScalarGrad rater_ce_loss(const Eigen::Ref<const Eigen::VectorXd>& softmax, int rater_label,
                         double rater_weight) {
  return consensus_ce_loss(softmax, rater_label, rater_weight);
}

ConsistencyGrad consistency_loss(const Eigen::Ref<const Eigen::VectorXd>& consensus_softmax,
                                 const Eigen::Ref<const Eigen::MatrixXd>& rater_softmaxes,
                                 ConsistencyVariant variant) {
  const Eigen::Index n_raters = rater_softmaxes.rows();
  const Eigen::Index k = consensus_softmax.size();
  if (rater_softmaxes.cols() != k) {
    throw ContractViolation("consistency_loss: class-count mismatch");
  }
  const Eigen::VectorXd mean = rater_softmaxes.colwise().mean();
  const Eigen::VectorXd diff = consensus_softmax - mean;

  ConsistencyGrad out;
  out.d_consensus = Eigen::VectorXd::Zero(k);
  out.d_raters = Eigen::MatrixXd::Zero(n_raters, k);
  if (variant == ConsistencyVariant::Euclidean) {
    out.value = diff.norm();
    if (out.value > 0.0) {
      out.d_consensus = diff / out.value;
      out.d_raters = (-1.0 / (out.value * static_cast<double>(n_raters)) * diff)
                         .transpose()
                         .replicate(n_raters, 1);
    }
  } else {
    out.value = diff.cwiseAbs().mean();
    const Eigen::VectorXd sgn = diff.array().sign();
    out.d_consensus = sgn / static_cast<double>(k);
    out.d_raters =
        (-1.0 / static_cast<double>(k * n_raters) * sgn).transpose().replicate(n_raters, 1);
  }
  return out;
}

ConfusionGrad confusion_loss(const ConfusionTensor& observed, const ConfusionTensor& predicted) {
  if (observed.size() != predicted.size()) {
    throw ContractViolation("confusion_loss: rater-count mismatch");
  }
  ConfusionGrad out;
  out.d_predicted.reserve(predicted.size());
  for (std::size_t r = 0; r < observed.size(); ++r) {
    if (observed[r].rows() != predicted[r].rows() || observed[r].cols() != predicted[r].cols()) {
      throw ContractViolation("confusion_loss: matrix-shape mismatch");
    }
    const Eigen::MatrixXd diff = predicted[r] - observed[r];
    out.value += diff.cwiseAbs().sum();
    out.d_predicted.push_back(diff.array().sign());
  }
  return out;
}

ScalarGrad shape_loss(const Eigen::Ref<const Eigen::Vector4d>& shape_out,
                      const Eigen::Ref<const Eigen::Vector4d>& target) {
  if (!shape_out.allFinite() || !target.allFinite()) {
    throw InputDomainError("shape_loss: non-finite input");
  }
  ScalarGrad out;
  const Eigen::Vector4d diff = shape_out - target;
  out.value = diff.squaredNorm() / 4.0;
  out.grad = 0.5 * diff;
  return out;
}

ObjectiveResult total_objective(const StageObjective& stage,
                                std::span<const SampleTargets> targets,
                                const ForwardTrace& trace) {
  const int n = static_cast<int>(trace.input.rows());
  const int k = static_cast<int>(trace.consensus_logits.cols());
  const int n_raters = static_cast<int>(trace.rater_logits.size());
  if (static_cast<int>(targets.size()) != n) {
    throw ContractViolation("total_objective: batch size mismatch");
  }
  if (!stage.active.any()) throw ConfigError("total_objective: stage has no active losses");
  const LossWeights& w = stage.weights;
  const double active_weight_sum = (stage.active.shape ? w.w_shape : 0.0) +
                                   (stage.active.consensus_ce ? w.w_ce : 0.0) +
                                   (stage.active.consensus_rmse ? w.w_rmse : 0.0) +
                                   (stage.active.rater_ce ? w.w_rater : 0.0) +
                                   (stage.active.cons ? w.w_cons : 0.0) +
                                   (stage.active.var ? w.w_var : 0.0);
  if (active_weight_sum == 0.0) {
    throw ConfigError("total_objective: all active losses have zero weight");
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  const bool need_consensus_softmax =
      stage.active.consensus_ce || stage.active.consensus_rmse || stage.active.cons ||
      stage.active.var;
  const bool need_rater_softmax = stage.active.rater_ce || stage.active.cons || stage.active.var;

  Eigen::MatrixXd consensus_sm;
  if (need_consensus_softmax) consensus_sm = softmax_rows(trace.consensus_logits);
  std::vector<Eigen::MatrixXd> rater_sm;
  if (need_rater_softmax) {
    rater_sm.reserve(n_raters);
    for (const auto& logits : trace.rater_logits) rater_sm.push_back(softmax_rows(logits));
  }

  // Raters with all-zero weight are excluded from every rater-side term.
  std::vector<bool> rater_active(n_raters, false);
  int n_active_raters = 0;
  for (int r = 0; r < n_raters; ++r) {
    for (const SampleTargets& t : targets) {
      if (t.rater_weights[r] > 0.0) {
        rater_active[r] = true;
        break;
      }
    }
    if (rater_active[r]) ++n_active_raters;
  }

  ObjectiveResult res;
  res.head_grads = zero_head_gradients(
      Architecture{static_cast<int>(trace.input.cols()), {}, k, n_raters}, n);
  Eigen::MatrixXd d_consensus_sm = Eigen::MatrixXd::Zero(n, k);
  std::vector<Eigen::MatrixXd> d_rater_sm(n_raters, Eigen::MatrixXd::Zero(n, k));

  if (stage.active.shape) {
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector4d diff = trace.shape_out.row(i).transpose() - targets[i].shape;
      res.terms.shape += diff.squaredNorm() / 4.0 * inv_n;
      res.head_grads.shape_out.row(i) = (w.w_shape * inv_n * 0.5) * diff.transpose();
    }
  }

  if (stage.active.consensus_ce) {
    for (int i = 0; i < n; ++i) {
      const double sw = targets[i].consensus_weight;
      const int c = targets[i].majority_class;
      res.terms.consensus_ce += sw * -std::log(std::max(consensus_sm(i, c), kLogClamp)) * inv_n;
      res.head_grads.consensus_logits.row(i) += (w.w_ce * sw * inv_n) * consensus_sm.row(i);
      res.head_grads.consensus_logits(i, c) -= w.w_ce * sw * inv_n;
    }
  }

  if (stage.active.consensus_rmse) {
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd diff = consensus_sm.row(i).transpose() - targets[i].consensus;
      const double rmse = std::sqrt(diff.squaredNorm() / static_cast<double>(k));
      const double sw = targets[i].consensus_weight;
      res.terms.consensus_rmse += sw * rmse * inv_n;
      if (rmse > 0.0) {
        d_consensus_sm.row(i) +=
            (w.w_rmse * sw * inv_n / (static_cast<double>(k) * rmse)) * diff.transpose();
      }
    }
  }

  if (stage.active.rater_ce) {
    for (int r = 0; r < n_raters; ++r) {
      if (!rater_active[r]) continue;
      for (int i = 0; i < n; ++i) {
        const double rw = targets[i].rater_weights[r];
        if (rw == 0.0) continue;
        const int label = targets[i].rater_labels[r];
        res.terms.rater_ce += rw * -std::log(std::max(rater_sm[r](i, label), kLogClamp)) * inv_n;
        res.head_grads.rater_logits[r].row(i) += (w.w_rater * rw * inv_n) * rater_sm[r].row(i);
        res.head_grads.rater_logits[r](i, label) -= w.w_rater * rw * inv_n;
      }
    }
  }

  if (stage.active.cons && n_active_raters > 0) {
    Eigen::MatrixXd mean_sm = Eigen::MatrixXd::Zero(n, k);
    for (int r = 0; r < n_raters; ++r) {
      if (rater_active[r]) mean_sm += rater_sm[r];
    }
    mean_sm /= static_cast<double>(n_active_raters);
    for (int i = 0; i < n; ++i) {
      const Eigen::RowVectorXd diff = consensus_sm.row(i) - mean_sm.row(i);
      if (stage.cons_variant == ConsistencyVariant::Euclidean) {
        const double dist = diff.norm();
        res.terms.cons += dist * inv_n;
        if (dist > 0.0) {
          const Eigen::RowVectorXd g = (w.w_cons * inv_n / dist) * diff;
          d_consensus_sm.row(i) += g;
          for (int r = 0; r < n_raters; ++r) {
            if (rater_active[r]) {
              d_rater_sm[r].row(i) -= g / static_cast<double>(n_active_raters);
            }
          }
        }
      } else {
        res.terms.cons += diff.cwiseAbs().mean() * inv_n;
        const Eigen::RowVectorXd g =
            (w.w_cons * inv_n / static_cast<double>(k)) * diff.array().sign().matrix();
        d_consensus_sm.row(i) += g;
        for (int r = 0; r < n_raters; ++r) {
          if (rater_active[r]) {
            d_rater_sm[r].row(i) -= g / static_cast<double>(n_active_raters);
          }
        }
      }
    }
  }

  if (stage.active.var) {
    // Batch-level term: observed and predicted joint confusion tensors are
    // both estimated from this batch.
    for (int r = 0; r < n_raters; ++r) {
      if (!rater_active[r]) continue;
      Eigen::MatrixXd observed = Eigen::MatrixXd::Zero(k, k);
      for (int i = 0; i < n; ++i) {
        observed.col(targets[i].rater_labels[r]) += targets[i].consensus;
      }
      observed *= inv_n;
      const Eigen::MatrixXd predicted = inv_n * consensus_sm.transpose() * rater_sm[r];
      const Eigen::MatrixXd sgn = (predicted - observed).array().sign();
      res.terms.var += (predicted - observed).cwiseAbs().sum();
      d_consensus_sm += (w.w_var * inv_n) * rater_sm[r] * sgn.transpose();
      d_rater_sm[r] += (w.w_var * inv_n) * consensus_sm * sgn;
    }
  }

  if (need_consensus_softmax && d_consensus_sm.cwiseAbs().sum() > 0.0) {
    res.head_grads.consensus_logits += softmax_vjp_rows(consensus_sm, d_consensus_sm);
  }
  for (int r = 0; r < n_raters; ++r) {
    if (need_rater_softmax && rater_active[r] && d_rater_sm[r].cwiseAbs().sum() > 0.0) {
      res.head_grads.rater_logits[r] += softmax_vjp_rows(rater_sm[r], d_rater_sm[r]);
    }
  }

  res.terms.total = w.w_shape * res.terms.shape + w.w_ce * res.terms.consensus_ce +
                    w.w_rmse * res.terms.consensus_rmse + w.w_rater * res.terms.rater_ce +
                    w.w_cons * res.terms.cons + w.w_var * res.terms.var;
  return res;
}

}  // namespace multirater
