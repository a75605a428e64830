#include "rail/envs.hpp"

#include <algorithm>
#include <cmath>

#include "rail/errors.hpp"

namespace rail {

double angle_normalize(double x) {
  constexpr double pi = std::numbers::pi;
  return std::fmod(std::fmod(x + pi, 2.0 * pi) + 2.0 * pi, 2.0 * pi) - pi;
}

Vec Env::prepare_action(const Vec& action) {
  const auto& s = spec();
  if (needs_reset_) throw ContractError(s.name + ": step() called before reset() or after episode end");
  if (action.size() != s.act_dim) {
    throw ShapeError(s.name + ": action dim " + std::to_string(action.size()) +
                     ", expected " + std::to_string(s.act_dim));
  }
  Vec clipped(action.size());
  for (Eigen::Index i = 0; i < action.size(); ++i) {
    const double a = std::isnan(action(i)) ? 0.0 : action(i);
    clipped(i) = std::clamp(a, s.action_low(i), s.action_high(i));
    if (clipped(i) != action(i)) ++clipped_;
  }
  return clipped;
}

void Env::finish_step(StepResult& r) {
  ++elapsed_;
  if (elapsed_ >= spec().max_episode_steps && !r.terminated) r.truncated = true;
  if (r.done()) needs_reset_ = true;
}

// ---- pendulum --------------------------------------------------------------

Pendulum::Pendulum() {
  using C = PendulumConstants;
  spec_.name = "pendulum";
  spec_.obs_dim = 3;
  spec_.act_dim = 1;
  spec_.action_low = Vec::Constant(1, -C::kMaxTorque);
  spec_.action_high = Vec::Constant(1, C::kMaxTorque);
  spec_.max_episode_steps = C::kMaxSteps;
}

Vec Pendulum::reset(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> th(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> thd(-PendulumConstants::kInitSpeed,
                                             PendulumConstants::kInitSpeed);
  theta_ = th(rng);
  theta_dot_ = thd(rng);
  elapsed_ = 0;
  needs_reset_ = false;
  return observation();
}

void Pendulum::set_state(double theta, double theta_dot) {
  theta_ = theta;
  theta_dot_ = theta_dot;
  elapsed_ = 0;
  needs_reset_ = false;
}

Vec Pendulum::observation() const {
  Vec o(3);
  o << std::cos(theta_), std::sin(theta_), theta_dot_;
  return o;
}

StepResult Pendulum::step(const Vec& action) {
  using C = PendulumConstants;
  const Vec u = prepare_action(action);
  const double torque = u(0);
  const double th = angle_normalize(theta_);
  const double cost = th * th + 0.1 * theta_dot_ * theta_dot_ + 0.001 * torque * torque;

  const double acc = 3.0 * C::kGravity / (2.0 * C::kLength) * std::sin(theta_) +
                     3.0 / (C::kMass * C::kLength * C::kLength) * torque;
  theta_dot_ = std::clamp(theta_dot_ + acc * C::kDt, -C::kMaxSpeed, C::kMaxSpeed);
  theta_ = theta_ + theta_dot_ * C::kDt;

  StepResult r;
  r.next_obs = observation();
  r.reward = -cost;
  finish_step(r);
  return r;
}

double Pendulum::energy(double theta, double theta_dot) {
  using C = PendulumConstants;
  return 0.5 * theta_dot * theta_dot + 1.5 * C::kGravity / C::kLength * std::cos(theta);
}

std::unique_ptr<Env> Pendulum::clone() const { return std::make_unique<Pendulum>(*this); }

// ---- pointgoal -------------------------------------------------------------

PointGoal::PointGoal() {
  using C = PointGoalConstants;
  spec_.name = "pointgoal";
  spec_.obs_dim = 4;
  spec_.act_dim = 2;
  spec_.action_low = Vec::Constant(2, -C::kMaxAccel);
  spec_.action_high = Vec::Constant(2, C::kMaxAccel);
  spec_.max_episode_steps = C::kMaxSteps;
}

Vec PointGoal::reset(std::uint64_t seed) {
  using C = PointGoalConstants;
  Rng rng(seed);
  std::uniform_real_distribution<double> box(-C::kSpawnHalfWidth, C::kSpawnHalfWidth);
  do {
    pos_ = Eigen::Vector2d(box(rng), box(rng));
  } while (pos_.norm() < C::kMinSpawnDistance);
  vel_.setZero();
  elapsed_ = 0;
  needs_reset_ = false;
  return observation();
}

void PointGoal::set_state(const Vec& position, const Vec& velocity) {
  if (position.size() != 2 || velocity.size() != 2) throw ShapeError("pointgoal: state is 2-D");
  pos_ = position;
  vel_ = velocity;
  elapsed_ = 0;
  needs_reset_ = false;
}

Vec PointGoal::observation() const {
  Vec o(4);
  o << pos_(0), pos_(1), vel_(0), vel_(1);
  return o;
}

StepResult PointGoal::step(const Vec& action) {
  using C = PointGoalConstants;
  const Vec u = prepare_action(action);
  vel_ = (vel_ + u * C::kDt).cwiseMax(-C::kMaxSpeed).cwiseMin(C::kMaxSpeed);
  pos_ += vel_ * C::kDt;
  const double dist = pos_.norm();
  StepResult r;
  r.next_obs = observation();
  r.reward = -dist - 0.01 * u.squaredNorm();
  r.terminated = dist < C::kGoalRadius;
  finish_step(r);
  return r;
}

std::unique_ptr<Env> PointGoal::clone() const { return std::make_unique<PointGoal>(*this); }

std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "pendulum") return std::make_unique<Pendulum>();
  if (name == "pointgoal") return std::make_unique<PointGoal>();
  throw ConfigError("unknown environment '" + name + "'");
}

std::vector<std::string> env_names() { return {"pendulum", "pointgoal"}; }

}  // namespace rail
