#include "rail/backbones.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rail/discriminator.hpp"
#include "rail/errors.hpp"

namespace rail {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
constexpr double kSquashLimit = 1.0 - 1e-9;

// log(1 - tanh(u)^2) in the overflow-free form 2 (log 2 - u - softplus(-2u)).
double log_one_minus_tanh_sq(double u) {
  return 2.0 * (std::numbers::ln2 - u - softplus(-2.0 * u));
}

Batch normal_batch(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Batch b(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) b(i, j) = n(rng);
  }
  return b;
}

Batch stack(const Batch& top, const Batch& bottom) {
  Batch out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

Batch clamp_log_std(const Batch& raw) {
  return raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
}

// 1 where the raw log_std lies inside the clamp range (gradient passes).
Batch clamp_mask(const Batch& raw) {
  return ((raw.array() >= kLogStdMin) && (raw.array() <= kLogStdMax)).cast<double>().matrix();
}

// Column-wise squashed Gaussian log-prob for reparameterized samples where
// (u - mean) / std == eps.
Vec reparam_logprob(const Batch& log_std, const Batch& eps, const Batch& u) {
  Vec lp(u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      s += -0.5 * eps(i, j) * eps(i, j) - log_std(i, j) - kHalfLog2Pi -
           log_one_minus_tanh_sq(u(i, j));
    }
    lp(j) = s;
  }
  return lp;
}

bool try_adam(Mlp& params, const Mlp& grads, AdamState& opt) {
  try {
    adam_update(params, grads, opt);
    return true;
  } catch (const NonFiniteError&) {
    return false;
  }
}

// MSE regression of a scalar network onto targets; returns the loss.
double regress_step(Mlp& net, AdamState& opt, const Batch& inputs, const Vec& targets,
                    bool& ok) {
  auto fwd = mlp_forward(net, inputs);
  const double B = static_cast<double>(inputs.cols());
  Batch diff = fwd.outputs - targets.transpose();
  const double loss = diff.squaredNorm() / B;
  if (!std::isfinite(loss)) {
    ok = false;
    return loss;
  }
  auto g = mlp_backward(net, fwd.cache, (2.0 / B) * diff);
  ok = try_adam(net, g.param_grads, opt);
  return loss;
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "sac") return Algorithm::kSac;
  if (name == "td3") return Algorithm::kTd3;
  if (name == "ppo") return Algorithm::kPpo;
  throw ConfigError("unknown backbone algorithm '" + name + "'");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kSac:
      return "sac";
    case Algorithm::kTd3:
      return "td3";
    case Algorithm::kPpo:
      return "ppo";
  }
  return "?";
}

void BackboneConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("backbone.gamma must lie in [0, 1]");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("backbone.tau must lie in (0, 1)");
  if (batch_size < 1 || policy_updates < 1 || cycle_length < 1 || hidden < 1) {
    throw ConfigError("backbone batch_size/policy_updates/cycle_length/hidden must be >= 1");
  }
  if (!(alpha >= 0.0)) throw ConfigError("backbone.alpha must be non-negative");
  if (!(policy_lr > 0.0) || !(q_lr > 0.0) || !(value_lr > 0.0)) {
    throw ConfigError("backbone learning rates must be positive");
  }
  if (warmup_q_steps < 0 || start_steps < 0) throw ConfigError("backbone warmup counts must be >= 0");
  if (replay_capacity < 1) throw ConfigError("backbone.replay_capacity must be >= 1");
  if (policy_delay < 1) throw ConfigError("backbone.policy_delay must be >= 1");
  if (!(clip_ratio > 0.0)) throw ConfigError("backbone.clip_ratio must be positive");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("backbone.gae_lambda must lie in [0, 1]");
  if (epochs < 1 || rollout_length < 1) throw ConfigError("backbone epochs/rollout_length must be >= 1");
}

// ---- replay ----------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim, int segment_dim)
    : capacity_(capacity) {
  if (capacity == 0) throw ContractError("replay buffer capacity must be positive");
  const auto c = static_cast<Eigen::Index>(capacity);
  obs_.resize(obs_dim, c);
  act_.resize(act_dim, c);
  next_obs_.resize(obs_dim, c);
  seg_.resize(std::max(segment_dim, 1), c);
  reward_.resize(c);
  term_.resize(c);
  trunc_.resize(c);
  serial_.assign(capacity, 0);
  ready_.assign(capacity, 0);
}

std::uint64_t ReplayBuffer::push(const Vec& obs, const Vec& action, double reward,
                                 const Vec& next_obs, bool terminated, bool truncated) {
  if (obs.size() != obs_.rows() || next_obs.size() != obs_.rows() || action.size() != act_.rows()) {
    throw ShapeError("replay push: dimension mismatch");
  }
  const auto c = static_cast<Eigen::Index>(cursor_);
  obs_.col(c) = obs;
  act_.col(c) = action;
  next_obs_.col(c) = next_obs;
  reward_(c) = reward;
  term_(c) = terminated ? 1.0 : 0.0;
  trunc_(c) = truncated ? 1.0 : 0.0;
  if (ready_[cursor_]) --ready_count_;
  ready_[cursor_] = 0;
  const std::uint64_t serial = next_serial_++;
  serial_[cursor_] = serial;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  return serial;
}

void ReplayBuffer::set_segment(std::uint64_t serial, const Vec& segment) {
  if (serial >= next_serial_ || next_serial_ - serial > size_) return;  // evicted
  const std::size_t slot = static_cast<std::size_t>(serial % capacity_);
  if (serial_[slot] != serial) return;
  if (segment.size() != seg_.rows()) throw ShapeError("replay set_segment: dimension mismatch");
  seg_.col(static_cast<Eigen::Index>(slot)) = segment;
  if (!ready_[slot]) ++ready_count_;
  ready_[slot] = 1;
}

std::size_t ReplayBuffer::slot_of_oldest(std::size_t i) const {
  if (i >= size_) throw ContractError("replay: index out of range");
  return size_ < capacity_ ? i : (cursor_ + i) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng,
                                                      bool require_segment) const {
  if (size_ == 0) throw ContractError("replay: sampling from an empty buffer");
  if (require_segment && ready_count_ == 0) {
    throw ContractError("replay: no transition has a complete segment yet");
  }
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) {
    do {
      i = pick(rng);
    } while (require_segment && !ready_[i]);
  }
  return idx;
}

ReplayBuffer::Sample ReplayBuffer::gather(const std::vector<std::size_t>& idx) const {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Sample s;
  s.obs.resize(obs_.rows(), n);
  s.action.resize(act_.rows(), n);
  s.next_obs.resize(obs_.rows(), n);
  s.segment.resize(seg_.rows(), n);
  s.reward.resize(n);
  s.terminated.resize(n);
  s.truncated.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto k = static_cast<Eigen::Index>(idx[static_cast<std::size_t>(j)]);
    s.obs.col(j) = obs_.col(k);
    s.action.col(j) = act_.col(k);
    s.next_obs.col(j) = next_obs_.col(k);
    s.segment.col(j) = seg_.col(k);
    s.reward(j) = reward_(k);
    s.terminated(j) = term_(k);
    s.truncated(j) = trunc_(k);
  }
  return s;
}

// ---- policies ----------------------------------------------------------------

PolicyParams make_policy(PolicyKind kind, const EnvSpec& env, int hidden, Rng& rng) {
  PolicyParams p;
  p.kind = kind;
  p.action_low = env.action_low;
  p.action_high = env.action_high;
  if (kind == PolicyKind::kSquashedGaussian) {
    p.net = make_mlp(env.obs_dim, hidden, 2 * env.act_dim, OutputActivation::kIdentity, rng);
  } else {
    p.net = make_mlp(env.obs_dim, hidden, env.act_dim, OutputActivation::kTanh, rng);
  }
  return p;
}

Vec scale_action(const PolicyParams& p, const Vec& squashed) {
  const Vec t = squashed.cwiseMax(-kSquashLimit).cwiseMin(kSquashLimit);
  return (p.action_low.array() +
          0.5 * (t.array() + 1.0) * (p.action_high - p.action_low).array())
      .matrix();
}

Vec unscale_action(const PolicyParams& p, const Vec& action) {
  return unscale_actions(p.action_low, p.action_high, action);
}

Batch unscale_actions(const Vec& low, const Vec& high, const Batch& actions) {
  Batch t = actions;
  t.colwise() -= low;
  t = (2.0 * (t.array().colwise() / (high - low).array()) - 1.0).matrix();
  return t;
}

ActionSample sample_action(const PolicyParams& policy, const Vec& obs, ActMode mode, Rng& rng) {
  if (!obs.allFinite()) throw ContractError("act: non-finite observation");
  const int ad = policy.act_dim();
  const Vec out = mlp_predict(policy.net, obs).col(0);
  ActionSample s;
  if (policy.kind == PolicyKind::kSquashedGaussian) {
    const Vec mean = out.head(ad);
    const Vec log_std = out.tail(ad).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    Vec u = mean;
    if (mode == ActMode::kStochastic) {
      u += (log_std.array().exp() * normal_batch(ad, 1, rng).col(0).array()).matrix();
    }
    s.pre_squash = u;
    s.logprob = squashed_gaussian_logprob(mean, log_std, u);
    s.action = scale_action(policy, u.array().tanh().matrix());
  } else {
    Vec t = out;
    if (mode == ActMode::kStochastic && policy.explore_noise > 0.0) {
      t += policy.explore_noise * normal_batch(ad, 1, rng).col(0);
      t = t.cwiseMax(-1.0).cwiseMin(1.0);
    }
    s.pre_squash = t;
    s.action = scale_action(policy, t);
  }
  return s;
}

Vec act(const PolicyParams& policy, const Vec& obs, ActMode mode, Rng& rng) {
  return sample_action(policy, obs, mode, rng).action;
}

double squashed_gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& u) {
  if (mean.size() != log_std.size() || mean.size() != u.size()) {
    throw ShapeError("squashed_gaussian_logprob: size mismatch");
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double z = (u(i) - mean(i)) * std::exp(-log_std(i));
    s += -0.5 * z * z - log_std(i) - kHalfLog2Pi - log_one_minus_tanh_sq(u(i));
  }
  return s;
}

LogProbGrad squashed_gaussian_logprob_grad(const Vec& mean, const Vec& log_std, const Vec& u) {
  LogProbGrad g;
  g.logprob = squashed_gaussian_logprob(mean, log_std, u);
  const Eigen::Index n = u.size();
  g.d_mean.resize(n);
  g.d_log_std.resize(n);
  g.d_pre_squash.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inv_std = std::exp(-log_std(i));
    const double z = (u(i) - mean(i)) * inv_std;
    g.d_mean(i) = z * inv_std;
    g.d_log_std(i) = z * z - 1.0;
    g.d_pre_squash(i) = -z * inv_std + 2.0 * std::tanh(u(i));
  }
  return g;
}

// ---- SAC ---------------------------------------------------------------------

SacState make_sac_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  SacState s;
  s.policy = make_policy(PolicyKind::kSquashedGaussian, env, cfg.hidden, rng);
  const int in = env.obs_dim + env.act_dim;
  s.q1 = make_mlp(in, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.q2 = make_mlp(in, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.q1_target = s.q1;
  s.q2_target = s.q2;
  s.policy_opt = AdamState(s.policy.net, cfg.policy_lr);
  s.q1_opt = AdamState(s.q1, cfg.q_lr);
  s.q2_opt = AdamState(s.q2, cfg.q_lr);
  s.alpha = cfg.alpha;
  s.log_alpha = std::log(std::max(cfg.alpha, 1e-12));
  return s;
}

Vec sac_targets(const SacState& s, const Vec& reward, const Batch& next_obs,
                const Vec& terminated, const BackboneConfig& cfg, Rng& rng) {
  const int ad = s.policy.act_dim();
  const Batch out = mlp_predict(s.policy.net, next_obs);
  const Batch mean = out.topRows(ad);
  const Batch log_std = clamp_log_std(out.bottomRows(ad));
  const Batch eps = normal_batch(ad, next_obs.cols(), rng);
  const Batch u = (mean.array() + log_std.array().exp() * eps.array()).matrix();
  const Vec logp = reparam_logprob(log_std, eps, u);
  const Batch sa = stack(next_obs, u.array().tanh().matrix());
  const Vec q1 = mlp_predict(s.q1_target, sa).row(0).transpose();
  const Vec q2 = mlp_predict(s.q2_target, sa).row(0).transpose();
  const Vec soft = q1.cwiseMin(q2) - s.alpha * logp;
  const Vec mask = (1.0 - terminated.array()).matrix();
  return reward + cfg.gamma * mask.cwiseProduct(soft);
}

BackboneLossReport sac_update(SacState& s, const ReplayBuffer& buffer, const RewardFn& reward_fn,
                              const BackboneConfig& cfg, Rng& rng, bool update_policy) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ContractError("sac_update: buffer smaller than batch");
  }
  BackboneLossReport rep;
  rep.alpha = s.alpha;
  const auto idx = buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), rng,
                                         static_cast<bool>(reward_fn));
  const auto smp = buffer.gather(idx);
  const Vec reward = reward_fn ? reward_fn(smp.segment) : smp.reward;
  const Batch a_n = unscale_actions(s.policy.action_low, s.policy.action_high, smp.action);
  const Vec y = sac_targets(s, reward, smp.next_obs, smp.terminated, cfg, rng);
  if (!y.allFinite()) {
    rep.skipped = true;
    ++s.skipped;
    return rep;
  }

  const Batch sa = stack(smp.obs, a_n);
  bool ok1 = true, ok2 = true;
  rep.q_loss = regress_step(s.q1, s.q1_opt, sa, y, ok1) + regress_step(s.q2, s.q2_opt, sa, y, ok2);
  if (!ok1 || !ok2) {
    rep.skipped = true;
    ++s.skipped;
  }
  ++s.q_updates;

  if (update_policy) {
    const int ad = s.policy.act_dim();
    const double B = static_cast<double>(cfg.batch_size);
    auto fwd = mlp_forward(s.policy.net, smp.obs);
    const Batch mean = fwd.outputs.topRows(ad);
    const Batch raw = fwd.outputs.bottomRows(ad);
    const Batch log_std = clamp_log_std(raw);
    const Batch std_dev = log_std.array().exp().matrix();
    const Batch eps = normal_batch(ad, smp.obs.cols(), rng);
    const Batch u = (mean.array() + std_dev.array() * eps.array()).matrix();
    const Batch t = u.array().tanh().matrix();
    const Vec logp = reparam_logprob(log_std, eps, u);

    const Batch sa_pi = stack(smp.obs, t);
    auto f1 = mlp_forward(s.q1, sa_pi);
    auto f2 = mlp_forward(s.q2, sa_pi);
    Batch pick1(1, sa_pi.cols()), pick2(1, sa_pi.cols());
    Vec qmin(sa_pi.cols());
    for (Eigen::Index j = 0; j < sa_pi.cols(); ++j) {
      const bool first = f1.outputs(0, j) <= f2.outputs(0, j);
      pick1(0, j) = first ? 1.0 : 0.0;
      pick2(0, j) = first ? 0.0 : 1.0;
      qmin(j) = first ? f1.outputs(0, j) : f2.outputs(0, j);
    }
    const Batch dq = (mlp_input_grad(s.q1, f1.cache, pick1) + mlp_input_grad(s.q2, f2.cache, pick2))
                         .bottomRows(ad);
    rep.policy_loss = (s.alpha * logp - qmin).mean();
    rep.mean_logprob = logp.mean();

    const auto dt_du = (1.0 - t.array().square());
    const auto tanh_u = t.array();
    Batch d_mean = ((s.alpha * 2.0 * tanh_u - dq.array() * dt_du) / B).matrix();
    Batch d_log_std =
        ((s.alpha * (-1.0 + 2.0 * tanh_u * std_dev.array() * eps.array()) -
          dq.array() * dt_du * std_dev.array() * eps.array()) /
         B * clamp_mask(raw).array())
            .matrix();
    auto g = mlp_backward(s.policy.net, fwd.cache, stack(d_mean, d_log_std));
    if (std::isfinite(rep.policy_loss) && try_adam(s.policy.net, g.param_grads, s.policy_opt)) {
      ++s.policy_updates;
      rep.policy_updated = true;
    } else {
      rep.skipped = true;
      ++s.skipped;
    }

    if (cfg.auto_alpha && std::isfinite(rep.mean_logprob)) {
      // d/d log_alpha of -log_alpha * (logp + target_entropy)
      const double grad = -(rep.mean_logprob - static_cast<double>(ad));
      s.alpha_adam_m = 0.9 * s.alpha_adam_m + 0.1 * grad;
      s.alpha_adam_v = 0.999 * s.alpha_adam_v + 0.001 * grad * grad;
      const double k = static_cast<double>(s.policy_updates);
      const double mh = s.alpha_adam_m / (1.0 - std::pow(0.9, k));
      const double vh = s.alpha_adam_v / (1.0 - std::pow(0.999, k));
      s.log_alpha -= cfg.q_lr * mh / (std::sqrt(vh) + 1e-8);
      s.alpha = std::exp(s.log_alpha);
    }
  }

  polyak_update(s.q1_target, s.q1, cfg.tau);
  polyak_update(s.q2_target, s.q2, cfg.tau);
  return rep;
}

// ---- TD3 ---------------------------------------------------------------------

Td3State make_td3_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  Td3State s;
  s.policy = make_policy(PolicyKind::kDeterministic, env, cfg.hidden, rng);
  s.policy.explore_noise = cfg.explore_noise;
  s.policy_target = s.policy.net;
  const int in = env.obs_dim + env.act_dim;
  s.q1 = make_mlp(in, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.q2 = make_mlp(in, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.q1_target = s.q1;
  s.q2_target = s.q2;
  s.policy_opt = AdamState(s.policy.net, cfg.policy_lr);
  s.q1_opt = AdamState(s.q1, cfg.q_lr);
  s.q2_opt = AdamState(s.q2, cfg.q_lr);
  return s;
}

Vec td3_targets(const Td3State& s, const Vec& reward, const Batch& next_obs,
                const Vec& terminated, const BackboneConfig& cfg, Rng& rng) {
  Batch t = mlp_predict(s.policy_target, next_obs);
  if (cfg.target_noise > 0.0) {
    const Batch noise = (cfg.target_noise * normal_batch(t.rows(), t.cols(), rng))
                            .cwiseMax(-cfg.noise_clip)
                            .cwiseMin(cfg.noise_clip);
    t = (t + noise).cwiseMax(-1.0).cwiseMin(1.0);
  }
  const Batch sa = stack(next_obs, t);
  const Vec q1 = mlp_predict(s.q1_target, sa).row(0).transpose();
  const Vec q2 = mlp_predict(s.q2_target, sa).row(0).transpose();
  const Vec mask = (1.0 - terminated.array()).matrix();
  return reward + cfg.gamma * mask.cwiseProduct(q1.cwiseMin(q2));
}

BackboneLossReport td3_update(Td3State& s, const ReplayBuffer& buffer, const RewardFn& reward_fn,
                              const BackboneConfig& cfg, Rng& rng, bool allow_policy) {
  if (buffer.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw ContractError("td3_update: buffer smaller than batch");
  }
  BackboneLossReport rep;
  const auto idx = buffer.sample_indices(static_cast<std::size_t>(cfg.batch_size), rng,
                                         static_cast<bool>(reward_fn));
  const auto smp = buffer.gather(idx);
  const Vec reward = reward_fn ? reward_fn(smp.segment) : smp.reward;
  const Batch a_n = unscale_actions(s.policy.action_low, s.policy.action_high, smp.action);
  const Vec y = td3_targets(s, reward, smp.next_obs, smp.terminated, cfg, rng);
  if (!y.allFinite()) {
    rep.skipped = true;
    ++s.skipped;
    return rep;
  }
  const Batch sa = stack(smp.obs, a_n);
  bool ok1 = true, ok2 = true;
  rep.q_loss = regress_step(s.q1, s.q1_opt, sa, y, ok1) + regress_step(s.q2, s.q2_opt, sa, y, ok2);
  if (!ok1 || !ok2) {
    rep.skipped = true;
    ++s.skipped;
  }
  ++s.q_updates;

  if (s.q_updates % static_cast<std::uint64_t>(cfg.policy_delay) != 0) return rep;
  if (allow_policy) {
    const int ad = s.policy.act_dim();
    const double B = static_cast<double>(cfg.batch_size);
    auto fwd = mlp_forward(s.policy.net, smp.obs);
    const Batch sa_pi = stack(smp.obs, fwd.outputs);
    auto f1 = mlp_forward(s.q1, sa_pi);
    rep.policy_loss = -f1.outputs.mean();
    const Batch up = Batch::Constant(1, sa_pi.cols(), -1.0 / B);
    const Batch dt = mlp_input_grad(s.q1, f1.cache, up).bottomRows(ad);
    auto g = mlp_backward(s.policy.net, fwd.cache, dt);
    if (std::isfinite(rep.policy_loss) && try_adam(s.policy.net, g.param_grads, s.policy_opt)) {
      ++s.policy_updates;
      rep.policy_updated = true;
      polyak_update(s.policy_target, s.policy.net, cfg.tau);
    } else {
      rep.skipped = true;
      ++s.skipped;
    }
  }
  polyak_update(s.q1_target, s.q1, cfg.tau);
  polyak_update(s.q2_target, s.q2, cfg.tau);
  return rep;
}

// ---- PPO ---------------------------------------------------------------------

RolloutBuilder::RolloutBuilder(int obs_dim, int act_dim, std::size_t capacity)
    : capacity_(capacity) {
  const auto c = static_cast<Eigen::Index>(capacity);
  r_.obs.resize(obs_dim, c);
  r_.next_obs.resize(obs_dim, c);
  r_.pre_squash.resize(act_dim, c);
  r_.logprob.resize(c);
  r_.reward.resize(c);
  r_.terminated.resize(c);
  r_.truncated.resize(c);
}

void RolloutBuilder::push(const Vec& obs, const Vec& pre_squash, double logprob, double reward,
                          const Vec& next_obs, bool terminated, bool truncated) {
  if (n_ >= capacity_) throw ContractError("rollout: capacity exceeded");
  const auto j = static_cast<Eigen::Index>(n_++);
  r_.obs.col(j) = obs;
  r_.pre_squash.col(j) = pre_squash;
  r_.next_obs.col(j) = next_obs;
  r_.logprob(j) = logprob;
  r_.reward(j) = reward;
  r_.terminated(j) = terminated ? 1.0 : 0.0;
  r_.truncated(j) = truncated ? 1.0 : 0.0;
}

void RolloutBuilder::set_reward(std::size_t index, double reward) {
  if (index >= n_) throw ContractError("rollout: reward index out of range");
  r_.reward(static_cast<Eigen::Index>(index)) = reward;
}

Rollout RolloutBuilder::finish() {
  const auto n = static_cast<Eigen::Index>(n_);
  Rollout out;
  out.obs = r_.obs.leftCols(n);
  out.next_obs = r_.next_obs.leftCols(n);
  out.pre_squash = r_.pre_squash.leftCols(n);
  out.logprob = r_.logprob.head(n);
  out.reward = r_.reward.head(n);
  out.terminated = r_.terminated.head(n);
  out.truncated = r_.truncated.head(n);
  n_ = 0;
  return out;
}

Vec gae_advantages(const Vec& rewards, const Vec& values, const Vec& next_values,
                   const Vec& terminated, const Vec& truncated, double gamma, double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || next_values.size() != n || terminated.size() != n ||
      truncated.size() != n) {
    throw ShapeError("gae_advantages: size mismatch");
  }
  Vec adv(n);
  double next_adv = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const bool term = terminated(t) != 0.0;
    const bool boundary = term || truncated(t) != 0.0 || t == n - 1;
    const double bootstrap = term ? 0.0 : gamma * next_values(t);
    const double delta = rewards(t) + bootstrap - values(t);
    adv(t) = delta + (boundary ? 0.0 : gamma * lambda * next_adv);
    next_adv = adv(t);
  }
  return adv;
}

PpoState make_ppo_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  PpoState s;
  s.policy = make_policy(PolicyKind::kSquashedGaussian, env, cfg.hidden, rng);
  s.value = make_mlp(env.obs_dim, cfg.hidden, 1, OutputActivation::kIdentity, rng);
  s.policy_opt = AdamState(s.policy.net, cfg.policy_lr);
  s.value_opt = AdamState(s.value, cfg.value_lr);
  return s;
}

BackboneLossReport ppo_update(PpoState& s, const Rollout& ro, const BackboneConfig& cfg,
                              Rng& rng) {
  const std::size_t T = ro.size();
  if (T == 0) throw ContractError("ppo_update: empty rollout");
  BackboneLossReport rep;
  const int ad = s.policy.act_dim();
  const Vec values = mlp_predict(s.value, ro.obs).row(0).transpose();
  const Vec next_values = mlp_predict(s.value, ro.next_obs).row(0).transpose();
  const Vec adv = gae_advantages(ro.reward, values, next_values, ro.terminated, ro.truncated,
                                 cfg.gamma, cfg.gae_lambda);
  const Vec returns = adv + values;
  const double mu = adv.mean();
  const double sd = T > 1 ? std::sqrt((adv.array() - mu).square().sum() / static_cast<double>(T)) : 0.0;
  const Vec adv_n = ((adv.array() - mu) / (sd + 1e-8)).matrix();

  std::vector<std::size_t> order(T);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), T);
  double clipped = 0.0, seen = 0.0, vloss = 0.0, ploss = 0.0, lp_sum = 0.0;
  int steps = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < T && !stop; start += mb) {
      const std::size_t end = std::min(T, start + mb);
      const auto n = static_cast<Eigen::Index>(end - start);
      Batch obs(ro.obs.rows(), n), u(ad, n);
      Vec old_lp(n), a(n), ret(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto k = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(j)]);
        obs.col(j) = ro.obs.col(k);
        u.col(j) = ro.pre_squash.col(k);
        old_lp(j) = ro.logprob(k);
        a(j) = adv_n(k);
        ret(j) = returns(k);
      }
      auto fwd = mlp_forward(s.policy.net, obs);
      const Batch mean = fwd.outputs.topRows(ad);
      const Batch raw = fwd.outputs.bottomRows(ad);
      const Batch log_std = clamp_log_std(raw);
      const Batch mask = clamp_mask(raw);
      Batch d_mean(ad, n), d_log_std(ad, n);
      double ratio_sum = 0.0, loss = 0.0;
      const double inv_n = 1.0 / static_cast<double>(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const auto g = squashed_gaussian_logprob_grad(mean.col(j), log_std.col(j), u.col(j));
        const double ratio = std::exp(g.logprob - old_lp(j));
        ratio_sum += ratio;
        lp_sum += g.logprob;
        const double lo = 1.0 - cfg.clip_ratio, hi = 1.0 + cfg.clip_ratio;
        const double surr = std::min(ratio * a(j), std::clamp(ratio, lo, hi) * a(j));
        loss -= surr * inv_n;
        const bool active = (a(j) >= 0.0 && ratio <= hi) || (a(j) < 0.0 && ratio >= lo);
        if (!active) clipped += 1.0;
        seen += 1.0;
        const double dlp = active ? -ratio * a(j) * inv_n : 0.0;
        d_mean.col(j) = dlp * g.d_mean;
        d_log_std.col(j) = (dlp * g.d_log_std.array() * mask.col(j).array()).matrix();
      }
      if (std::abs(ratio_sum * inv_n - 1.0) > 10.0 * cfg.clip_ratio) {
        stop = true;
        ++rep.early_stops;
        ++s.early_stops;
        break;
      }
      ploss += loss;
      auto pg = mlp_backward(s.policy.net, fwd.cache, stack(d_mean, d_log_std));
      if (!std::isfinite(loss) || !try_adam(s.policy.net, pg.param_grads, s.policy_opt)) {
        rep.skipped = true;
        ++s.skipped;
      } else {
        rep.policy_updated = true;
      }
      bool ok = true;
      vloss += regress_step(s.value, s.value_opt, obs, ret, ok);
      if (!ok) {
        rep.skipped = true;
        ++s.skipped;
      }
      ++steps;
    }
  }
  ++s.updates;
  rep.q_loss = steps > 0 ? vloss / steps : 0.0;
  rep.policy_loss = steps > 0 ? ploss / steps : 0.0;
  rep.clip_fraction = seen > 0.0 ? clipped / seen : 0.0;
  rep.mean_logprob = seen > 0.0 ? lp_sum / seen : 0.0;
  return rep;
}

}  // namespace rail
