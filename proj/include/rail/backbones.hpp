#ifndef RAIL_BACKBONES_HPP_
#define RAIL_BACKBONES_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rail/envs.hpp"
#include "rail/nn.hpp"

namespace rail {

enum class Algorithm { kSac, kTd3, kPpo };

Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);

struct BackboneConfig {
  Algorithm algorithm = Algorithm::kSac;
  double gamma = 0.99;
  int batch_size = 400;
  double alpha = 0.02;  // SAC temperature
  bool auto_alpha = false;
  double tau = 0.005;   // Polyak factor for target networks
  double policy_lr = 1e-3;
  double q_lr = 1e-3;
  int policy_updates = 674;  // X backbone updates ...
  int cycle_length = 100;    // ... every Y environment steps
  int warmup_q_steps = 5000;
  int hidden = 256;
  int replay_capacity = 1'000'000;
  int start_steps = 1000;  // uniform-random exploration before warmup

  // TD3
  int policy_delay = 2;
  double target_noise = 0.2;
  double noise_clip = 0.5;
  double explore_noise = 0.1;

  // PPO
  double clip_ratio = 0.2;
  double gae_lambda = 0.95;
  int epochs = 10;
  int rollout_length = 2048;
  double value_lr = 1e-3;

  void validate() const;
};

// Per-transition storage. reward_slot holds whatever the collector recorded;
// imitation runs recompute rewards from segments at sample time instead.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int obs_dim, int act_dim, int segment_dim);

  // Returns a serial number identifying the stored transition.
  std::uint64_t push(const Vec& obs, const Vec& action, double reward, const Vec& next_obs,
                     bool terminated, bool truncated);
  // Attaches the discriminator segment anchored at the given transition. No-op
  // if the transition was already evicted.
  void set_segment(std::uint64_t serial, const Vec& segment);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t pushes() const { return next_serial_; }
  std::size_t ready_count() const { return ready_count_; }

  // Storage slot of the i-th oldest stored transition.
  std::size_t slot_of_oldest(std::size_t i) const;
  std::uint64_t serial_at(std::size_t slot) const { return serial_[slot]; }
  bool segment_ready(std::size_t slot) const { return ready_[slot] != 0; }

  // Uniform slot indices over stored transitions; with `require_segment`,
  // only transitions whose segment is complete are eligible.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng, bool require_segment) const;

  struct Sample {
    Batch obs, action, next_obs, segment;
    Vec reward, terminated, truncated;
  };
  Sample gather(const std::vector<std::size_t>& idx) const;

  // Direct slot access for tests.
  double& reward_slot(std::size_t slot) { return reward_(static_cast<Eigen::Index>(slot)); }

 private:
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t next_serial_ = 0;
  std::size_t ready_count_ = 0;
  Batch obs_, act_, next_obs_, seg_;
  Vec reward_, term_, trunc_;
  std::vector<std::uint64_t> serial_;
  std::vector<char> ready_;
};

enum class PolicyKind { kSquashedGaussian, kDeterministic };

// SAC/PPO: MLP emitting (mean, log_std) per action dim, tanh-squashed into
// the action box. TD3: MLP with tanh head plus Gaussian exploration noise.
struct PolicyParams {
  PolicyKind kind = PolicyKind::kSquashedGaussian;
  Mlp net;
  Vec action_low;
  Vec action_high;
  double explore_noise = 0.1;

  int act_dim() const { return static_cast<int>(action_low.size()); }
};

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;

PolicyParams make_policy(PolicyKind kind, const EnvSpec& env, int hidden, Rng& rng);

enum class ActMode { kStochastic, kDeterministic };

// Squashed value t in (-1, 1) -> environment action and back.
Vec scale_action(const PolicyParams& p, const Vec& squashed);
Vec unscale_action(const PolicyParams& p, const Vec& action);
Batch unscale_actions(const Vec& low, const Vec& high, const Batch& actions);

struct ActionSample {
  Vec action;      // environment units, strictly inside the bounds
  Vec pre_squash;  // u (Gaussian policies) or the noisy tanh output (TD3)
  double logprob = 0.0;
};

ActionSample sample_action(const PolicyParams& policy, const Vec& obs, ActMode mode, Rng& rng);
Vec act(const PolicyParams& policy, const Vec& obs, ActMode mode, Rng& rng);

// log N(u; mean, exp(log_std)) - sum log(1 - tanh(u)^2), summed over dims.
double squashed_gaussian_logprob(const Vec& mean, const Vec& log_std, const Vec& pre_squash);

struct LogProbGrad {
  double logprob = 0.0;
  Vec d_mean;     // holding pre_squash fixed
  Vec d_log_std;
  Vec d_pre_squash;
};
LogProbGrad squashed_gaussian_logprob_grad(const Vec& mean, const Vec& log_std,
                                           const Vec& pre_squash);

struct BackboneLossReport {
  double q_loss = 0.0;       // twin-Q loss (SAC/TD3) or value loss (PPO)
  double policy_loss = 0.0;
  double alpha = 0.0;
  double mean_logprob = 0.0;
  double clip_fraction = 0.0;
  bool policy_updated = false;
  bool skipped = false;
  int early_stops = 0;
};

// Maps a (segment_dim x batch) matrix to rewards. Empty => use reward_slot.
using RewardFn = std::function<Vec(const Batch& segments)>;

struct SacState {
  PolicyParams policy;
  Mlp q1, q2, q1_target, q2_target;
  AdamState policy_opt, q1_opt, q2_opt;
  double alpha = 0.02;
  double log_alpha = 0.0;
  double alpha_adam_m = 0.0, alpha_adam_v = 0.0;
  std::uint64_t q_updates = 0;
  std::uint64_t policy_updates = 0;
  std::uint64_t skipped = 0;
};

SacState make_sac_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng);

// One twin-Q step and, when `update_policy`, one policy step, then a Polyak
// target update. Target: r + gamma (1 - terminated) (min Q' - alpha logpi).
BackboneLossReport sac_update(SacState& state, const ReplayBuffer& buffer,
                              const RewardFn& reward_fn, const BackboneConfig& cfg, Rng& rng,
                              bool update_policy = true);

// Per-transition SAC targets for explicit tensors; exposed for tests.
Vec sac_targets(const SacState& state, const Vec& reward, const Batch& next_obs,
                const Vec& terminated, const BackboneConfig& cfg, Rng& rng);

struct Td3State {
  PolicyParams policy;
  Mlp policy_target;
  Mlp q1, q2, q1_target, q2_target;
  AdamState policy_opt, q1_opt, q2_opt;
  std::uint64_t q_updates = 0;
  std::uint64_t policy_updates = 0;
  std::uint64_t skipped = 0;
};

Td3State make_td3_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng);

// Twin-Q step with target policy smoothing; the policy (and targets) step on
// every policy_delay-th Q step when `allow_policy`.
BackboneLossReport td3_update(Td3State& state, const ReplayBuffer& buffer,
                              const RewardFn& reward_fn, const BackboneConfig& cfg, Rng& rng,
                              bool allow_policy = true);

Vec td3_targets(const Td3State& state, const Vec& reward, const Batch& next_obs,
                const Vec& terminated, const BackboneConfig& cfg, Rng& rng);

// On-policy batch; rewards were fixed at collection time.
struct Rollout {
  Batch obs, next_obs, pre_squash;
  Vec logprob, reward, terminated, truncated;
  std::size_t size() const { return static_cast<std::size_t>(reward.size()); }
};

class RolloutBuilder {
 public:
  RolloutBuilder(int obs_dim, int act_dim, std::size_t capacity);
  void push(const Vec& obs, const Vec& pre_squash, double logprob, double reward,
            const Vec& next_obs, bool terminated, bool truncated);
  // Late reward assignment (segments completing after the step was taken).
  void set_reward(std::size_t index, double reward);
  std::size_t size() const { return n_; }
  bool full() const { return n_ == capacity_; }
  Rollout finish();
  const Batch& obs() const { return r_.obs; }
  const Batch& next_obs() const { return r_.next_obs; }

 private:
  std::size_t capacity_, n_ = 0;
  Rollout r_;
};

// Generalized advantage estimation. next_values[t] = V(s_{t+1}); the
// bootstrap is dropped on termination and the recursion is cut at any
// episode end (terminated or truncated) and at the end of the rollout.
Vec gae_advantages(const Vec& rewards, const Vec& values, const Vec& next_values,
                   const Vec& terminated, const Vec& truncated, double gamma, double lambda);

struct PpoState {
  PolicyParams policy;
  Mlp value;
  AdamState policy_opt, value_opt;
  std::uint64_t updates = 0;
  std::uint64_t early_stops = 0;
  std::uint64_t skipped = 0;
};

PpoState make_ppo_state(const EnvSpec& env, const BackboneConfig& cfg, Rng& rng);

// `epochs` passes of clipped-surrogate minibatch steps plus value regression.
// An epoch whose mean probability ratio strays more than 10 * clip_ratio from
// 1 ends the update early.
BackboneLossReport ppo_update(PpoState& state, const Rollout& rollout, const BackboneConfig& cfg,
                              Rng& rng);

}  // namespace rail

#endif  // RAIL_BACKBONES_HPP_
