#ifndef RAIL_DISCRIMINATOR_HPP_
#define RAIL_DISCRIMINATOR_HPP_

#include <cstdint>
#include <string>

#include "rail/nn.hpp"
#include "rail/representation.hpp"

namespace rail {

// How a discriminator logit turns into a reward for the backbone.
enum class RewardMapping {
  kSoftplus,  // -log(1 - D) = softplus(logit)
  kLogit,     // log D - log(1 - D) = logit
};

RewardMapping parse_reward_mapping(const std::string& name);
std::string to_string(RewardMapping m);

struct DiscConfig {
  double learning_rate = 6e-5;
  double entropy_coeff = 0.0;
  double grad_penalty_coeff = 0.0006;
  int batch_size = 400;
  int update_every = 100;
  int warmup_steps = 500;
  int rounds_per_update = 1;
  int hidden = 128;
  RewardMapping reward_mapping = RewardMapping::kSoftplus;
  double reward_clip = 10.0;

  void validate() const;
};

struct DiscState {
  Mlp params;  // segment_dim -> hidden -> hidden -> 1 logit
  AdamState adam;
  std::uint64_t updates_done = 0;
  std::uint64_t updates_skipped = 0;
};

DiscState make_disc_state(int segment_dim, const DiscConfig& cfg, Rng& rng);

struct DiscLossReport {
  double bce_expert = 0.0;   // mean -log D(expert)
  double bce_learner = 0.0;  // mean -log(1 - D(learner))
  double grad_penalty = 0.0; // mean |grad_x logit|^2 at interpolates
  double entropy = 0.0;      // mean Bernoulli entropy over both batches
  double total = 0.0;
  double mean_d_expert = 0.0;
  double mean_d_learner = 0.0;
  bool skipped = false;
};

double disc_logit(const DiscState& state, const Segment& segment);
Vec disc_logits(const Mlp& params, const Batch& segments);

struct DiscLossGrad {
  DiscLossReport report;
  Mlp grads;
};

// Loss and parameter gradient for equal-size batches; `mixed` holds the
// gradient-penalty anchor points (ignored when the coefficient is 0).
DiscLossGrad disc_loss_grad(const Mlp& params, const Batch& expert, const Batch& learner,
                            const Batch& mixed, const DiscConfig& cfg);

// One Adam step on BCE(expert -> 1) + BCE(learner -> 0) + gp_coeff * GP
// - entropy_coeff * H. The smaller batch is resampled with replacement so
// both sides have equal size; interpolation weights come from `rng`.
// A non-finite loss or gradient skips the step and bumps updates_skipped.
DiscLossReport disc_update(DiscState& state, const Batch& expert, const Batch& learner,
                           const DiscConfig& cfg, Rng& rng);

struct GradientPenalty {
  double value = 0.0;
  Mlp grads;
};

// GP = mean_b |d logit / d x_b|^2 and its gradient w.r.t. the network
// parameters, obtained by differentiating the explicit backward pass.
GradientPenalty gradient_penalty(const Mlp& params, const Batch& mixed);

// x = eps * expert + (1 - eps) * learner, eps ~ U[0, 1] per column.
Batch interpolate(const Batch& expert, const Batch& learner, Rng& rng);

double mapped_reward(double logit, RewardMapping mapping, double clip);
double imitation_reward(const DiscState& state, const Segment& segment,
                        const DiscConfig& cfg);
Vec imitation_rewards(const Mlp& params, const Batch& segments, const DiscConfig& cfg);

double softplus(double x);
double sigmoid(double x);

// Fraction of expert columns with D > 0.5 plus learner columns with D < 0.5.
double disc_accuracy(const Mlp& params, const Batch& expert, const Batch& learner);

}  // namespace rail

#endif  // RAIL_DISCRIMINATOR_HPP_
