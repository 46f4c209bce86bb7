#include "multirater/network.hpp"

#include <cmath>

#include "multirater/errors.hpp"
#include "multirater/rng.hpp"

namespace multirater {

namespace {

constexpr std::uint64_t kInitTag = 0x6e6574u;  // init stream key

std::vector<std::pair<int, int>> layer_shapes(const Architecture& arch) {
  std::vector<std::pair<int, int>> shapes;  // (out, in)
  int in = arch.feature_dim;
  for (int width : arch.trunk_widths) {
    if (width < 1) throw InputDomainError("architecture: trunk width must be >= 1");
    shapes.emplace_back(width, in);
    in = width;
  }
  shapes.emplace_back(Architecture::shape_dim, in);
  shapes.emplace_back(arch.n_classes, in);
  for (int r = 0; r < arch.n_raters; ++r) shapes.emplace_back(arch.n_classes, in);
  return shapes;
}

template <typename Fn>
void for_each_layer(ModelParams& p, Fn&& fn) {
  for (auto& layer : p.trunk) fn(layer);
  fn(p.shape_head);
  fn(p.consensus_head);
  for (auto& layer : p.rater_heads) fn(layer);
}

template <typename Fn>
void for_each_layer(const ModelParams& p, Fn&& fn) {
  for (const auto& layer : p.trunk) fn(layer);
  fn(p.shape_head);
  fn(p.consensus_head);
  for (const auto& layer : p.rater_heads) fn(layer);
}

void adam_update_layer(LinearLayer& param, const LinearLayer& grad, LinearLayer& m,
                       LinearLayer& v, const AdamConfig& cfg, double bc1, double bc2) {
  m.weight = cfg.beta1 * m.weight + (1.0 - cfg.beta1) * grad.weight;
  v.weight = cfg.beta2 * v.weight + (1.0 - cfg.beta2) * grad.weight.cwiseProduct(grad.weight);
  param.weight.array() -=
      cfg.lr * (m.weight.array() / bc1) / ((v.weight.array() / bc2).sqrt() + cfg.eps);
  m.bias = cfg.beta1 * m.bias + (1.0 - cfg.beta1) * grad.bias;
  v.bias = cfg.beta2 * v.bias + (1.0 - cfg.beta2) * grad.bias.cwiseProduct(grad.bias);
  param.bias.array() -=
      cfg.lr * (m.bias.array() / bc1) / ((v.bias.array() / bc2).sqrt() + cfg.eps);
}

}  // namespace

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  const auto shapes = layer_shapes(arch);
  ModelParams params = zeros_like(arch);
  std::size_t idx = 0;
  for_each_layer(params, [&](LinearLayer& layer) {
    const auto [out, in] = shapes[idx];
    RandomStream stream = RandomStream::derive(seed, {kInitTag, idx});
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.weight(i, j) = sd * stream.normal();
    }
    ++idx;
  });
  return params;
}

ModelParams zeros_like(const Architecture& arch) {
  ModelParams params;
  const auto shapes = layer_shapes(arch);
  std::size_t idx = 0;
  auto make = [&]() {
    const auto [out, in] = shapes[idx++];
    return LinearLayer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
  };
  for (std::size_t i = 0; i < arch.trunk_widths.size(); ++i) params.trunk.push_back(make());
  params.shape_head = make();
  params.consensus_head = make();
  for (int r = 0; r < arch.n_raters; ++r) params.rater_heads.push_back(make());
  return params;
}

ForwardTrace forward(const ModelParams& params,
                     const Eigen::Ref<const Eigen::MatrixXd>& features) {
  if (!features.allFinite()) throw InputDomainError("forward: non-finite input features");
  if (params.trunk.empty() || features.cols() != params.trunk.front().weight.cols()) {
    throw ContractViolation("forward: feature width does not match the trunk");
  }
  ForwardTrace trace;
  trace.input = features;
  Eigen::MatrixXd a = features;
  for (const LinearLayer& layer : params.trunk) {
    Eigen::MatrixXd z = (a * layer.weight.transpose()).rowwise() + layer.bias.transpose();
    trace.pre.push_back(z);
    a = z.cwiseMax(0.0);
    trace.post.push_back(a);
  }
  trace.shape_out =
      (a * params.shape_head.weight.transpose()).rowwise() + params.shape_head.bias.transpose();
  trace.consensus_logits = (a * params.consensus_head.weight.transpose()).rowwise() +
                           params.consensus_head.bias.transpose();
  trace.rater_logits.reserve(params.rater_heads.size());
  for (const LinearLayer& head : params.rater_heads) {
    trace.rater_logits.push_back((a * head.weight.transpose()).rowwise() +
                                 head.bias.transpose());
  }
  return trace;
}

ModelGrads backward(const ModelParams& params, const ForwardTrace& trace,
                    const HeadGradients& upstream) {
  if (trace.post.size() != params.trunk.size() ||
      trace.rater_logits.size() != params.rater_heads.size() ||
      upstream.rater_logits.size() != params.rater_heads.size()) {
    throw ContractViolation("backward: trace/upstream do not match the params");
  }
  ModelGrads grads = zeros_like(architecture_of(params));
  const Eigen::MatrixXd& trunk_out = trace.post.back();

  grads.shape_head.weight = upstream.shape_out.transpose() * trunk_out;
  grads.shape_head.bias = upstream.shape_out.colwise().sum();
  grads.consensus_head.weight = upstream.consensus_logits.transpose() * trunk_out;
  grads.consensus_head.bias = upstream.consensus_logits.colwise().sum();

  Eigen::MatrixXd d_trunk_out = upstream.shape_out * params.shape_head.weight +
                                upstream.consensus_logits * params.consensus_head.weight;
  for (std::size_t r = 0; r < params.rater_heads.size(); ++r) {
    grads.rater_heads[r].weight = upstream.rater_logits[r].transpose() * trunk_out;
    grads.rater_heads[r].bias = upstream.rater_logits[r].colwise().sum();
    d_trunk_out += upstream.rater_logits[r] * params.rater_heads[r].weight;
  }

  Eigen::MatrixXd d_post = d_trunk_out;
  for (int l = static_cast<int>(params.trunk.size()) - 1; l >= 0; --l) {
    // Rectifier subgradient: exactly 0 at 0.
    const Eigen::MatrixXd d_pre =
        d_post.array() * (trace.pre[l].array() > 0.0).cast<double>();
    const Eigen::MatrixXd& below = l == 0 ? trace.input : trace.post[l - 1];
    grads.trunk[l].weight = d_pre.transpose() * below;
    grads.trunk[l].bias = d_pre.colwise().sum();
    if (l > 0) d_post = d_pre * params.trunk[l].weight;
  }
  return grads;
}

AdamState make_adam_state(const Architecture& arch, const AdamConfig& config) {
  return AdamState{zeros_like(arch), zeros_like(arch), 0, config};
}

void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const FreezeMask& frozen) {
  if (!all_finite(grads)) {
    throw TrainingDivergence("adam_step: non-finite gradient", state.step);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step));
  if (!frozen.trunk) {
    for (std::size_t l = 0; l < params.trunk.size(); ++l) {
      adam_update_layer(params.trunk[l], grads.trunk[l], state.m.trunk[l], state.v.trunk[l],
                        state.config, bc1, bc2);
    }
  }
  if (!frozen.shape_head) {
    adam_update_layer(params.shape_head, grads.shape_head, state.m.shape_head,
                      state.v.shape_head, state.config, bc1, bc2);
  }
  if (!frozen.consensus_head) {
    adam_update_layer(params.consensus_head, grads.consensus_head, state.m.consensus_head,
                      state.v.consensus_head, state.config, bc1, bc2);
  }
  if (!frozen.rater_heads) {
    for (std::size_t r = 0; r < params.rater_heads.size(); ++r) {
      adam_update_layer(params.rater_heads[r], grads.rater_heads[r], state.m.rater_heads[r],
                        state.v.rater_heads[r], state.config, bc1, bc2);
    }
  }
}

HeadGradients zero_head_gradients(const Architecture& arch, int batch_size) {
  HeadGradients g;
  g.shape_out = Eigen::MatrixXd::Zero(batch_size, Architecture::shape_dim);
  g.consensus_logits = Eigen::MatrixXd::Zero(batch_size, arch.n_classes);
  g.rater_logits.assign(arch.n_raters,
                        Eigen::MatrixXd::Zero(batch_size, arch.n_classes));
  return g;
}

Eigen::MatrixXd softmax_rows(const Eigen::Ref<const Eigen::MatrixXd>& logits) {
  Eigen::MatrixXd shifted = logits.colwise() - logits.rowwise().maxCoeff();
  Eigen::MatrixXd expd = shifted.array().exp();
  return expd.array().colwise() / expd.rowwise().sum().array();
}

Eigen::MatrixXd softmax_vjp_rows(const Eigen::Ref<const Eigen::MatrixXd>& softmax,
                                 const Eigen::Ref<const Eigen::MatrixXd>& upstream) {
  const Eigen::VectorXd dot = (softmax.array() * upstream.array()).rowwise().sum();
  return softmax.array() * (upstream.colwise() - dot).array();
}

Architecture architecture_of(const ModelParams& params) {
  Architecture arch;
  arch.feature_dim = static_cast<int>(params.trunk.front().weight.cols());
  arch.trunk_widths.clear();
  for (const auto& layer : params.trunk) {
    arch.trunk_widths.push_back(static_cast<int>(layer.weight.rows()));
  }
  arch.n_classes = static_cast<int>(params.consensus_head.weight.rows());
  arch.n_raters = static_cast<int>(params.rater_heads.size());
  return arch;
}

std::size_t param_count(const Architecture& arch) {
  std::size_t count = 0;
  for (const auto& [out, in] : layer_shapes(arch)) {
    count += static_cast<std::size_t>(out) * in + out;
  }
  return count;
}

Eigen::VectorXd flatten(const ModelParams& params) {
  Eigen::VectorXd flat(param_count(architecture_of(params)));
  Eigen::Index pos = 0;
  for_each_layer(params, [&](const LinearLayer& layer) {
    const Eigen::Index n = layer.weight.size();
    flat.segment(pos, n) = Eigen::Map<const Eigen::VectorXd>(layer.weight.data(), n);
    pos += n;
    flat.segment(pos, layer.bias.size()) = layer.bias;
    pos += layer.bias.size();
  });
  return flat;
}

ModelParams unflatten(const Architecture& arch, const Eigen::Ref<const Eigen::VectorXd>& flat) {
  if (static_cast<std::size_t>(flat.size()) != param_count(arch)) {
    throw ContractViolation("unflatten: size does not match the architecture");
  }
  ModelParams params = zeros_like(arch);
  Eigen::Index pos = 0;
  for_each_layer(params, [&](LinearLayer& layer) {
    const Eigen::Index n = layer.weight.size();
    layer.weight = Eigen::Map<const Eigen::MatrixXd>(flat.segment(pos, n).data(),
                                                     layer.weight.rows(), layer.weight.cols());
    pos += n;
    layer.bias = flat.segment(pos, layer.bias.size());
    pos += layer.bias.size();
  });
  return params;
}

bool all_finite(const ModelParams& params) {
  bool ok = true;
  for_each_layer(params, [&](const LinearLayer& layer) {
    ok = ok && layer.weight.allFinite() && layer.bias.allFinite();
  });
  return ok;
}

}  // namespace multirater
