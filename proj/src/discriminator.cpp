#include "rail/discriminator.hpp"

#include <algorithm>
#include <cmath>

#include "rail/errors.hpp"

namespace rail {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

RewardMapping parse_reward_mapping(const std::string& name) {
  if (name == "softplus" || name == "neg_log_one_minus_d") return RewardMapping::kSoftplus;
  if (name == "logit") return RewardMapping::kLogit;
  throw ConfigError("unknown reward mapping '" + name + "'");
}

std::string to_string(RewardMapping m) {
  return m == RewardMapping::kSoftplus ? "softplus" : "logit";
}

void DiscConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("discriminator.learning_rate must be positive");
  }
  if (!(entropy_coeff >= 0.0) || !std::isfinite(entropy_coeff)) {
    throw ConfigError("discriminator.entropy_coeff must be non-negative");
  }
  if (!(grad_penalty_coeff >= 0.0) || !std::isfinite(grad_penalty_coeff)) {
    throw ConfigError("discriminator.grad_penalty_coeff must be non-negative");
  }
  if (batch_size < 1 || update_every < 1 || rounds_per_update < 1 || hidden < 1) {
    throw ConfigError("discriminator batch_size/update_every/rounds/hidden must be >= 1");
  }
  if (warmup_steps < 0) throw ConfigError("discriminator.warmup_steps must be >= 0");
  if (!(reward_clip > 0.0)) throw ConfigError("discriminator.reward_clip must be positive");
}

DiscState make_disc_state(int segment_dim, const DiscConfig& cfg, Rng& rng) {
  cfg.validate();
  DiscState s;
  s.params = make_mlp(segment_dim, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.adam = AdamState(s.params, cfg.learning_rate);
  return s;
}

double disc_logit(const DiscState& state, const Segment& segment) {
  if (segment.values.size() != state.params.input_dim()) {
    throw ShapeError("disc_logit: segment dim " + std::to_string(segment.values.size()) +
                     ", discriminator expects " + std::to_string(state.params.input_dim()));
  }
  return mlp_predict(state.params, segment.values)(0, 0);
}

Vec disc_logits(const Mlp& params, const Batch& segments) {
  if (segments.rows() != params.input_dim()) throw ShapeError("disc_logits: dim mismatch");
  return mlp_predict(params, segments).row(0).transpose();
}

Batch interpolate(const Batch& expert, const Batch& learner, Rng& rng) {
  if (expert.rows() != learner.rows() || expert.cols() != learner.cols()) {
    throw ShapeError("interpolate: batch shapes differ");
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch mixed(expert.rows(), expert.cols());
  for (Eigen::Index j = 0; j < expert.cols(); ++j) {
    const double eps = u(rng);
    mixed.col(j) = eps * expert.col(j) + (1.0 - eps) * learner.col(j);
  }
  return mixed;
}

namespace {

bool tanh_layer(const Mlp& m, std::size_t i) {
  return i + 1 < m.num_layers() || m.output_activation == OutputActivation::kTanh;
}

}  // namespace

GradientPenalty gradient_penalty(const Mlp& params, const Batch& mixed) {
  if (params.output_dim() != 1) throw ShapeError("gradient_penalty: scalar-output network required");
  const auto fwd = mlp_forward(params, mixed);
  const auto& c = fwd.cache;
  const std::size_t L = params.num_layers();
  const auto B = static_cast<double>(mixed.cols());

  // Activation slopes phi'(z) and curvatures phi''(z) per layer.
  std::vector<Batch> d1(L), d2(L);
  for (std::size_t i = 0; i < L; ++i) {
    if (tanh_layer(params, i)) {
      const auto a = c.post[i + 1].array();
      d1[i] = (1.0 - a.square()).matrix();
      d2[i] = (-2.0 * a * (1.0 - a.square())).matrix();
    } else {
      d1[i] = Batch::Ones(c.pre[i].rows(), c.pre[i].cols());
      d2[i] = Batch::Zero(c.pre[i].rows(), c.pre[i].cols());
    }
  }

  // Input-gradient pass with unit upstream: g[i] is d logit / d post[i].
  std::vector<Batch> g(L + 1), delta(L);
  g[L] = Batch::Ones(1, mixed.cols());
  for (std::size_t i = L; i-- > 0;) {
    delta[i] = (g[i + 1].array() * d1[i].array()).matrix();
    g[i] = params.weights[i].transpose() * delta[i];
  }
  const Batch& gx = g[0];

  GradientPenalty out;
  out.value = gx.colwise().squaredNorm().sum() / B;
  out.grads = params.zeros_like();

  // Reverse sweep through the input-gradient pass.
  Batch gbar = (2.0 / B) * gx;
  std::vector<Batch> zbar(L);
  for (std::size_t i = 0; i < L; ++i) {
    out.grads.weights[i].noalias() = delta[i] * gbar.transpose();
    Batch delta_bar = params.weights[i] * gbar;
    zbar[i] = (delta_bar.array() * g[i + 1].array() * d2[i].array()).matrix();
    gbar = (delta_bar.array() * d1[i].array()).matrix();
  }

  // Ordinary backward through the forward pass with the injected adjoints.
  Batch abar = Batch::Zero(1, mixed.cols());
  for (std::size_t i = L; i-- > 0;) {
    Batch zt = zbar[i] + (abar.array() * d1[i].array()).matrix();
    out.grads.weights[i].noalias() += zt * c.post[i].transpose();
    out.grads.biases[i] = zt.rowwise().sum();
    if (i > 0) abar.noalias() = params.weights[i].transpose() * zt;
  }
  out.grads.touch();
  return out;
}

DiscLossGrad disc_loss_grad(const Mlp& params, const Batch& expert, const Batch& learner,
                            const Batch& mixed, const DiscConfig& cfg) {
  if (expert.cols() == 0 || learner.cols() == 0) throw ContractError("disc_loss_grad: empty batch");
  if (expert.cols() != learner.cols()) throw ContractError("disc_loss_grad: batch sizes differ");
  if (expert.rows() != params.input_dim() || learner.rows() != params.input_dim()) {
    throw ShapeError("disc_loss_grad: segment dim mismatch");
  }
  const Eigen::Index n = expert.cols();
  Batch both(expert.rows(), 2 * n);
  both << expert, learner;
  const auto fwd = mlp_forward(params, both);
  const auto& logits = fwd.outputs;

  DiscLossGrad r;
  auto& rep = r.report;
  Batch dlogit(1, 2 * n);
  const double inv_n = 1.0 / static_cast<double>(n);
  double entropy = 0.0;
  for (Eigen::Index j = 0; j < 2 * n; ++j) {
    const double l = logits(0, j);
    const double p = sigmoid(l);
    if (j < n) {
      rep.bce_expert += softplus(-l) * inv_n;
      rep.mean_d_expert += p * inv_n;
      dlogit(0, j) = (p - 1.0) * inv_n;
    } else {
      rep.bce_learner += softplus(l) * inv_n;
      rep.mean_d_learner += p * inv_n;
      dlogit(0, j) = p * inv_n;
    }
    entropy += p * softplus(-l) + (1.0 - p) * softplus(l);
  }
  rep.entropy = entropy * 0.5 * inv_n;
  if (cfg.entropy_coeff != 0.0) {
    // d(-c H)/dl = c * l * p (1 - p) / 2n
    for (Eigen::Index j = 0; j < 2 * n; ++j) {
      const double l = logits(0, j);
      const double p = sigmoid(l);
      dlogit(0, j) += cfg.entropy_coeff * l * p * (1.0 - p) * 0.5 * inv_n;
    }
  }
  r.grads = mlp_backward(params, fwd.cache, dlogit).param_grads;
  rep.total = rep.bce_expert + rep.bce_learner - cfg.entropy_coeff * rep.entropy;
  if (cfg.grad_penalty_coeff != 0.0) {
    auto gp = gradient_penalty(params, mixed);
    rep.grad_penalty = gp.value;
    rep.total += cfg.grad_penalty_coeff * gp.value;
    axpy(r.grads, gp.grads, cfg.grad_penalty_coeff);
  }
  return r;
}

namespace {

Batch resample(const Batch& b, Eigen::Index n, Rng& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, b.cols() - 1);
  Batch out(b.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) out.col(j) = b.col(pick(rng));
  return out;
}

}  // namespace

DiscLossReport disc_update(DiscState& state, const Batch& expert, const Batch& learner,
                           const DiscConfig& cfg, Rng& rng) {
  if (expert.cols() == 0 || learner.cols() == 0) throw ContractError("disc_update: empty batch");
  const Eigen::Index n = std::max(expert.cols(), learner.cols());
  const Batch e = expert.cols() == n ? expert : resample(expert, n, rng);
  const Batch l = learner.cols() == n ? learner : resample(learner, n, rng);
  Batch mixed;
  if (cfg.grad_penalty_coeff != 0.0) mixed = interpolate(e, l, rng);
  auto lg = disc_loss_grad(state.params, e, l, mixed, cfg);
  if (!std::isfinite(lg.report.total)) {
    lg.report.skipped = true;
    ++state.updates_skipped;
    return lg.report;
  }
  try {
    adam_update(state.params, lg.grads, state.adam);
  } catch (const NonFiniteError&) {
    lg.report.skipped = true;
    ++state.updates_skipped;
    return lg.report;
  }
  ++state.updates_done;
  return lg.report;
}

double mapped_reward(double logit, RewardMapping mapping, double clip) {
  const double r = mapping == RewardMapping::kSoftplus ? softplus(logit) : logit;
  if (std::isnan(r)) return 0.0;
  return std::clamp(r, -clip, clip);
}

double imitation_reward(const DiscState& state, const Segment& segment, const DiscConfig& cfg) {
  return mapped_reward(disc_logit(state, segment), cfg.reward_mapping, cfg.reward_clip);
}

Vec imitation_rewards(const Mlp& params, const Batch& segments, const DiscConfig& cfg) {
  Vec logits = disc_logits(params, segments);
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    logits(i) = mapped_reward(logits(i), cfg.reward_mapping, cfg.reward_clip);
  }
  return logits;
}

double disc_accuracy(const Mlp& params, const Batch& expert, const Batch& learner) {
  const Vec le = disc_logits(params, expert);
  const Vec ll = disc_logits(params, learner);
  const double hits = static_cast<double>((le.array() > 0.0).count() + (ll.array() < 0.0).count());
  return hits / static_cast<double>(le.size() + ll.size());
}

}  // namespace rail
