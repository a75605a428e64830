#ifndef RAIL_ENVS_HPP_
#define RAIL_ENVS_HPP_

#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "rail/nn.hpp"

namespace rail {

struct EnvSpec {
  std::string name;
  int obs_dim = 0;
  int act_dim = 0;
  Vec action_low;
  Vec action_high;
  int max_episode_steps = 1;
};

struct StepResult {
  Vec next_obs;
  double reward = 0.0;
  bool terminated = false;  // environment-defined end (goal reached)
  bool truncated = false;   // time limit
  bool done() const { return terminated || truncated; }
};

// Deterministic MDP: the (seed, action sequence) pair fixes the trajectory.
class Env {
 public:
  virtual ~Env() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual Vec reset(std::uint64_t seed) = 0;
  // Out-of-bound actions are clipped and counted in clipped_actions().
  virtual StepResult step(const Vec& action) = 0;
  virtual Vec observation() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  int elapsed_steps() const { return elapsed_; }
  std::uint64_t clipped_actions() const { return clipped_; }
  bool needs_reset() const { return needs_reset_; }

 protected:
  // Clips into the action box, counting any clipped components; throws on a
  // dimension mismatch or a step taken after the episode ended.
  Vec prepare_action(const Vec& action);
  void finish_step(StepResult& r);

  int elapsed_ = 0;
  std::uint64_t clipped_ = 0;
  bool needs_reset_ = true;
};

// Torque-limited swing-up. theta = 0 is upright.
//   theta_ddot = 3 g / (2 l) sin(theta) + 3 / (m l^2) u
// integrated with semi-implicit Euler: velocity first (clipped to max_speed),
// then angle with the new velocity.
struct PendulumConstants {
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxSpeed = 8.0;
  static constexpr double kMaxTorque = 2.0;
  static constexpr int kMaxSteps = 200;
  // reset: theta ~ U[-pi, pi], theta_dot ~ U[-1, 1]
  static constexpr double kInitSpeed = 1.0;
  // Lower bound of the per-step reward.
  static constexpr double kMinReward =
      -(std::numbers::pi * std::numbers::pi + 0.1 * kMaxSpeed * kMaxSpeed +
        0.001 * kMaxTorque * kMaxTorque);
};

class Pendulum final : public Env {
 public:
  Pendulum();

  const EnvSpec& spec() const override { return spec_; }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const Vec& action) override;
  Vec observation() const override;
  std::unique_ptr<Env> clone() const override;

  // Places the pendulum in an arbitrary state and starts a fresh episode.
  void set_state(double theta, double theta_dot);
  double theta() const { return theta_; }
  double theta_dot() const { return theta_dot_; }

  // Mechanical energy per unit inertia: 0.5 theta_dot^2 + (3g/2l) cos(theta).
  static double energy(double theta, double theta_dot);

 private:
  EnvSpec spec_;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
};

// 2-D point mass steering toward a goal at the origin.
//   v' = clip(v + u dt, +-max_speed), p' = p + v' dt
// reward = -|p'| - 0.01 |u|^2; terminates once |p'| < goal_radius.
// Observation: (px, py, vx, vy).
struct PointGoalConstants {
  static constexpr double kDt = 0.1;
  static constexpr double kMaxAccel = 1.0;
  static constexpr double kMaxSpeed = 2.0;
  static constexpr double kGoalRadius = 0.1;
  static constexpr double kSpawnHalfWidth = 2.0;  // p ~ U[-2, 2]^2, v = 0
  static constexpr double kMinSpawnDistance = 0.5;
  static constexpr int kMaxSteps = 300;
};

class PointGoal final : public Env {
 public:
  PointGoal();

  const EnvSpec& spec() const override { return spec_; }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const Vec& action) override;
  Vec observation() const override;
  std::unique_ptr<Env> clone() const override;

  void set_state(const Vec& position, const Vec& velocity);

 private:
  EnvSpec spec_;
  Eigen::Vector2d pos_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel_ = Eigen::Vector2d::Zero();
};

// Name lookup: "pendulum" or "pointgoal".
std::unique_ptr<Env> make_env(const std::string& name);
std::vector<std::string> env_names();

double angle_normalize(double x);

}  // namespace rail

#endif  // RAIL_ENVS_HPP_
