#ifndef RAIL_ENGINE_HPP_
#define RAIL_ENGINE_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rail/backbones.hpp"
#include "rail/demos.hpp"
#include "rail/discriminator.hpp"
#include "rail/envs.hpp"
#include "rail/representation.hpp"

namespace rail {

// One RAIL trial: environment, discriminator input representation,
// discriminator and RL backbone.
struct EngineConfig {
  std::string env = "pendulum";
  SegmentSpec segment = SegmentSpec::state_pair();
  DiscConfig disc;
  BackboneConfig backbone;
  int total_steps = 100'000;
  int eval_every = 4000;
  int eval_episodes = 10;
  // Train on the environment reward instead of the discriminator (experts).
  bool use_true_reward = false;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0x9e3779b97f4a7c15ULL;

  void validate() const;
};

// Counts "iterations" in environment interactions.
struct Schedule {
  int disc_update_every = 100;
  int disc_rounds = 1;
  int policy_updates_x = 674;
  int cycle_y = 100;
  int warmup_q_steps = 5000;
  int warmup_disc_steps = 500;
  int eval_every = 4000;
  int eval_episodes = 10;
  int total_steps = 100'000;

  static Schedule from(const EngineConfig& cfg);
};

struct EvalResult {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> returns;
};

// Deterministic policy on the true reward. Episode i resets with
// eval_seed(base, i); nothing outside the passed env copy is touched.
EvalResult evaluate(const PolicyParams& policy, const Env& env_prototype, int n_episodes,
                    std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t training_episode_seed(std::uint64_t trial_seed, std::uint64_t episode);
std::uint64_t eval_episode_seed(std::uint64_t eval_seed, std::uint64_t episode);

struct EvalRecord {
  int env_steps = 0;
  double mean = 0.0, min = 0.0, max = 0.0;
  double disc_loss = 0.0, disc_expert = 0.0, disc_learner = 0.0, disc_gp = 0.0;
  double q_loss = 0.0, policy_loss = 0.0, mean_logprob = 0.0, clip_fraction = 0.0;
  std::uint64_t disc_updates = 0, q_updates = 0, policy_updates = 0;
};

struct TrialMetrics {
  std::vector<EvalRecord> records;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string label;
  double expert_return = 0.0;
  bool failed = false;
  std::string error;
  // Summary counters.
  std::uint64_t disc_updates = 0, q_updates = 0, policy_updates = 0;
  std::uint64_t disc_skipped = 0, backbone_skipped = 0, ppo_early_stops = 0;
  std::uint64_t clipped_actions = 0;
};

// Line-delimited JSON: one "eval" record per evaluation then a "summary".
std::string metrics_to_jsonl(const TrialMetrics& m);
TrialMetrics metrics_from_jsonl(const std::string& text);

class Engine {
 public:
  // `demos` may be null only with use_true_reward.
  Engine(EngineConfig cfg, std::shared_ptr<const DemoDataset> demos);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // One environment interaction plus whatever the schedule triggers.
  void step();
  // Steps until total_steps; returns the collected metrics.
  TrialMetrics run();

  // Called after every evaluation; returning true stops run() early.
  std::function<bool(const EvalRecord&)> on_eval;

  const EngineConfig& config() const { return cfg_; }
  const Schedule& schedule() const { return sched_; }
  int env_steps() const { return steps_; }
  bool warmed_up() const { return warmed_up_; }
  // Environment step at which warmup ran (-1 before).
  int warmup_step() const { return warmup_at_; }
  std::uint64_t disc_updates() const;
  std::uint64_t q_updates() const;
  std::uint64_t policy_updates() const;
  std::uint64_t evaluations() const { return metrics_.records.size(); }
  // Discriminator/Q update counts observed right before the first policy
  // update.
  std::optional<std::uint64_t> disc_updates_before_policy() const { return disc_before_policy_; }
  std::optional<std::uint64_t> q_updates_before_policy() const { return q_before_policy_; }
  const PolicyParams& policy() const;
  const DiscState* discriminator() const { return disc_ ? &*disc_ : nullptr; }
  const ReplayBuffer* replay() const { return buffer_.get(); }
  const TrialMetrics& metrics() const { return metrics_; }
  const Batch& expert_segment_matrix() const { return expert_segs_; }
  const AffineParams& affine() const { return affine_; }

  EvalResult evaluate_now() const;

 private:
  bool off_policy() const { return cfg_.backbone.algorithm != Algorithm::kPpo; }
  void begin_episode();
  void record_segment_completion();
  void maybe_warmup();
  void run_warmup();
  void disc_round();
  void backbone_round(bool allow_policy);
  void ppo_round();
  void note_policy_update();
  void do_eval();
  Batch sample_expert(int n);
  Batch learner_segments(int n);
  Vec reward_for(const Batch& segments) const;

  EngineConfig cfg_;
  Schedule sched_;
  Batch expert_segs_;
  AffineParams affine_;
  std::unique_ptr<Env> env_;
  std::unique_ptr<Env> eval_env_;
  Rng rng_;
  std::optional<DiscState> disc_;
  std::optional<SacState> sac_;
  std::optional<Td3State> td3_;
  std::optional<PpoState> ppo_;
  std::unique_ptr<ReplayBuffer> buffer_;
  std::unique_ptr<RolloutBuilder> rollout_;
  Batch rollout_segments_;
  Eigen::Index rollout_segment_count_ = 0;
  Batch previous_rollout_segments_;

  // Current episode.
  std::vector<Vec> ep_obs_;
  std::vector<Vec> ep_act_;
  std::vector<std::uint64_t> ep_serial_;
  std::vector<std::ptrdiff_t> ep_rollout_index_;
  std::uint64_t episodes_started_ = 0;
  Vec obs_;

  int steps_ = 0;
  bool warmed_up_ = false;
  int warmup_at_ = -1;
  std::optional<std::uint64_t> disc_before_policy_, q_before_policy_;
  DiscLossReport last_disc_;
  BackboneLossReport last_backbone_;
  TrialMetrics metrics_;
  bool stop_ = false;
};

}  // namespace rail

#endif  // RAIL_ENGINE_HPP_
