#ifndef RAIL_DEMOS_HPP_
#define RAIL_DEMOS_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rail/backbones.hpp"
#include "rail/envs.hpp"
#include "rail/representation.hpp"

namespace rail {

// Demonstration episodes recorded from an expert policy. When
// actions_included is false no trajectory carries actions.
struct DemoDataset {
  std::string env;
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<Trajectory> episodes;
  bool actions_included = false;
  double expert_mean_return = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> episode_returns;

  std::size_t transitions() const;
  DemoDataset observations_only() const;
  void validate() const;
  bool operator==(const DemoDataset& other) const;
};

// Read-only view over demonstration states with no way to reach actions.
// Imitation-from-observation runs only ever see expert data through this.
class ObservationDataset {
 public:
  explicit ObservationDataset(const DemoDataset& demos);

  const std::string& env() const { return env_; }
  int obs_dim() const { return obs_dim_; }
  std::size_t episodes() const { return episodes_.size(); }
  const std::vector<Vec>& observations(std::size_t episode) const { return episodes_.at(episode); }

 private:
  std::string env_;
  int obs_dim_ = 0;
  std::vector<std::vector<Vec>> episodes_;
};

// Stacked expert segments; episodes too short for one segment are skipped.
Batch expert_segments(const ObservationDataset& demos, const SegmentSpec& spec);
Batch expert_segments(const DemoDataset& demos, const SegmentSpec& spec);

// Deterministic-mode rollouts of `policy`; episode i resets with a seed
// derived from (seed, i).
DemoDataset record_demos(const PolicyParams& policy, Env& env, int n_episodes,
                         bool include_actions, std::uint64_t seed);

// Line-delimited text; see docs/formats.md.
void save_demos(std::ostream& out, const DemoDataset& demos);
DemoDataset load_demos(std::istream& in);
void save_demos(const std::string& path, const DemoDataset& demos);
DemoDataset load_demos(const std::string& path);
// Also checks dimensions against the environment.
DemoDataset load_demos(const std::string& path, const EnvSpec& env);

struct ExpertOptions {
  double target_return = -200.0;
  int step_budget = 150'000;
  int eval_every = 2000;
  int eval_episodes = 10;
  std::uint64_t seed = 0;
};

struct ExpertResult {
  PolicyParams policy;
  double eval_return = 0.0;
  int env_steps = 0;
  bool reached_target = false;
  std::string warning;
};

// SAC on the true environment reward. Returns the first checkpoint whose
// deterministic evaluation reaches the target, otherwise the best one with a
// warning. Throws if the best return falls short of the target by more than
// 20% of |target|.
ExpertResult train_expert(const std::string& env_name, const BackboneConfig& cfg,
                          const ExpertOptions& opts);

// Policy checkpoint: kind, action bounds and the network (docs/formats.md).
void save_policy(const std::string& path, const PolicyParams& policy);
PolicyParams load_policy(const std::string& path);

}  // namespace rail

#endif  // RAIL_DEMOS_HPP_
