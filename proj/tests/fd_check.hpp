#pragma once

// Shared finite-difference gradient oracle for the network/losses tests and
// the acceptance suite. Problems are resampled deterministically until every
// relevant quantity is bounded away from the nondifferentiable points
// (rectifier kinks, |.| at 0, distances at 0), where central differences
// are meaningless.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "multirater/label_model.hpp"
#include "multirater/losses.hpp"
#include "multirater/network.hpp"
#include "multirater/rng.hpp"

namespace fdcheck {

struct Problem {
  multirater::Architecture arch;
  multirater::ModelParams params;
  Eigen::MatrixXd features;
  std::vector<multirater::SampleTargets> targets;
};

inline multirater::StageObjective all_terms_stage() {
  multirater::StageObjective stage;
  stage.active.shape = true;
  stage.active.consensus_ce = true;
  stage.active.consensus_rmse = true;
  stage.active.rater_ce = true;
  stage.active.cons = true;
  stage.active.var = true;
  return stage;
}

inline multirater::StageObjective single_term_stage(multirater::LossTerm term) {
  multirater::StageObjective stage;
  switch (term) {
    case multirater::LossTerm::Shape: stage.active.shape = true; break;
    case multirater::LossTerm::ConsensusCe: stage.active.consensus_ce = true; break;
    case multirater::LossTerm::ConsensusRmse: stage.active.consensus_rmse = true; break;
    case multirater::LossTerm::RaterCe: stage.active.rater_ce = true; break;
    case multirater::LossTerm::Cons: stage.active.cons = true; break;
    case multirater::LossTerm::Var: stage.active.var = true; break;
  }
  return stage;
}

inline Problem make_problem(std::uint64_t seed) {
  using namespace multirater;
  Problem p;
  p.arch.feature_dim = 3;
  p.arch.trunk_widths = {5, 4};
  p.arch.n_classes = 4;
  p.arch.n_raters = 3;
  p.params = init_params(p.arch, seed);

  RandomStream stream = RandomStream::derive(seed, {0xfddcULL});
  const int batch = 4;
  p.features.resize(batch, p.arch.feature_dim);
  for (int i = 0; i < batch; ++i) {
    for (int j = 0; j < p.arch.feature_dim; ++j) p.features(i, j) = 2.0 * stream.normal();
  }
  for (int i = 0; i < batch; ++i) {
    Eigen::VectorXi labels(p.arch.n_raters);
    for (int r = 0; r < p.arch.n_raters; ++r) {
      labels[r] = static_cast<int>(stream.next_u64() % p.arch.n_classes);
    }
    SampleTargets t;
    t.consensus = consensus_distribution(labels, p.arch.n_classes);
    t.majority_class = majority_vote(t.consensus);
    t.consensus_weight = consensus_sample_weight(t.consensus);
    t.rater_labels = labels;
    t.rater_weights.resize(p.arch.n_raters);
    for (int r = 0; r < p.arch.n_raters; ++r) {
      t.rater_weights[r] = rater_sample_weight(labels, r, p.arch.n_classes);
    }
    for (int j = 0; j < 4; ++j) t.shape[j] = stream.normal();
    p.targets.push_back(std::move(t));
  }
  return p;
}

// Rejects problems whose trace sits within `margin` of any kink.
inline bool away_from_kinks(const Problem& p, double margin = 1e-4) {
  using namespace multirater;
  const ForwardTrace trace = forward(p.params, p.features);
  for (const Eigen::MatrixXd& pre : trace.pre) {
    if (pre.cwiseAbs().minCoeff() < margin) return false;
  }
  const Eigen::MatrixXd consensus_sm = softmax_rows(trace.consensus_logits);
  std::vector<Eigen::MatrixXd> rater_sm;
  for (const auto& logits : trace.rater_logits) rater_sm.push_back(softmax_rows(logits));
  const int n = static_cast<int>(p.features.rows());
  const int k = p.arch.n_classes;

  Eigen::MatrixXd mean_sm = Eigen::MatrixXd::Zero(n, k);
  for (const auto& sm : rater_sm) mean_sm += sm;
  mean_sm /= static_cast<double>(rater_sm.size());
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVectorXd target = p.targets[i].consensus.transpose();
    if ((consensus_sm.row(i) - target).norm() < margin) return false;
    if ((consensus_sm.row(i) - mean_sm.row(i)).norm() < margin) return false;
  }
  for (int r = 0; r < p.arch.n_raters; ++r) {
    Eigen::MatrixXd observed = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) {
      observed.col(p.targets[i].rater_labels[r]) += p.targets[i].consensus;
    }
    observed /= static_cast<double>(n);
    const Eigen::MatrixXd predicted =
        consensus_sm.transpose() * rater_sm[r] / static_cast<double>(n);
    if ((predicted - observed).cwiseAbs().minCoeff() < margin) return false;
  }
  return true;
}

inline Problem make_safe_problem(std::uint64_t seed) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Problem p = make_problem(seed + 1000003ULL * attempt);
    if (away_from_kinks(p)) return p;
  }
  throw std::runtime_error("fdcheck: could not find a kink-free problem");
}

inline double objective_value(const multirater::StageObjective& stage, const Problem& p,
                              const multirater::ModelParams& params) {
  const multirater::ForwardTrace trace = multirater::forward(params, p.features);
  return multirater::total_objective(stage, p.targets, trace).terms.total;
}

inline Eigen::VectorXd analytic_gradient(const multirater::StageObjective& stage,
                                         const Problem& p) {
  const multirater::ForwardTrace trace = multirater::forward(p.params, p.features);
  const multirater::ObjectiveResult obj = multirater::total_objective(stage, p.targets, trace);
  return multirater::flatten(multirater::backward(p.params, trace, obj.head_grads));
}

inline Eigen::VectorXd numeric_gradient(const multirater::StageObjective& stage,
                                        const Problem& p, double h = 1e-5) {
  Eigen::VectorXd flat = multirater::flatten(p.params);
  Eigen::VectorXd grad(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + h;
    const double up = objective_value(stage, p, multirater::unflatten(p.arch, flat));
    flat[i] = saved - h;
    const double down = objective_value(stage, p, multirater::unflatten(p.arch, flat));
    flat[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

}  // namespace fdcheck
