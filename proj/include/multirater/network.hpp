#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace multirater {

/// Fixed feed-forward topology: rectifier trunk shared by a 4-parameter
/// shape-regression head, a K-way consensus head, and R K-way rater heads.
struct Architecture {
  int feature_dim = 16;
  std::vector<int> trunk_widths = {64, 64};
  int n_classes = 4;
  int n_raters = 6;
  static constexpr int shape_dim = 4;
};

struct LinearLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct ModelParams {
  std::vector<LinearLayer> trunk;
  LinearLayer shape_head;
  LinearLayer consensus_head;
  std::vector<LinearLayer> rater_heads;
};

/// Gradients share the parameter layout.
using ModelGrads = ModelParams;

/// Cached activations for one forward pass over a batch (rows = samples).
/// A single sample is a batch of one row.
struct ForwardTrace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // trunk pre-activations
  std::vector<Eigen::MatrixXd> post;  // trunk rectified activations
  Eigen::MatrixXd shape_out;          // N x 4
  Eigen::MatrixXd consensus_logits;   // N x K
  std::vector<Eigen::MatrixXd> rater_logits;  // R matrices, N x K
};

/// Upstream gradients at the heads (same shapes as the trace outputs).
struct HeadGradients {
  Eigen::MatrixXd shape_out;
  Eigen::MatrixXd consensus_logits;
  std::vector<Eigen::MatrixXd> rater_logits;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;
  AdamConfig config;
};

/// Parameter groups excluded from optimizer updates.
struct FreezeMask {
  bool trunk = false;
  bool shape_head = false;
  bool consensus_head = false;
  bool rater_heads = false;
};

/// Weights ~ N(0, 1/fan_in), biases zero; deterministic in seed.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

ModelParams zeros_like(const Architecture& arch);

ForwardTrace forward(const ModelParams& params,
                     const Eigen::Ref<const Eigen::MatrixXd>& features);

/// Exact reverse-mode gradients of the scalar objective whose head
/// gradients are supplied. The trace must come from forward() with the
/// same params.
ModelGrads backward(const ModelParams& params, const ForwardTrace& trace,
                    const HeadGradients& upstream);

AdamState make_adam_state(const Architecture& arch, const AdamConfig& config);

/// Bias-corrected Adam update. Frozen groups are left untouched, moments
/// included, so their parameters stay bit-identical.
void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const FreezeMask& frozen = {});

HeadGradients zero_head_gradients(const Architecture& arch, int batch_size);

/// Row-wise stable softmax.
Eigen::MatrixXd softmax_rows(const Eigen::Ref<const Eigen::MatrixXd>& logits);

/// Pull a gradient on softmax outputs back to the logits, row-wise:
/// dL/dz = s .* (g - <g, s>).
Eigen::MatrixXd softmax_vjp_rows(const Eigen::Ref<const Eigen::MatrixXd>& softmax,
                                 const Eigen::Ref<const Eigen::MatrixXd>& upstream);

Architecture architecture_of(const ModelParams& params);
std::size_t param_count(const Architecture& arch);
Eigen::VectorXd flatten(const ModelParams& params);
ModelParams unflatten(const Architecture& arch, const Eigen::Ref<const Eigen::VectorXd>& flat);
bool all_finite(const ModelParams& params);

}  // namespace multirater
