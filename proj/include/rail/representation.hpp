#ifndef RAIL_REPRESENTATION_HPP_
#define RAIL_REPRESENTATION_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rail/nn.hpp"

namespace rail {

// One episode: L observations and, optionally, the L-1 actions between them.
class Trajectory {
 public:
  Trajectory() = default;
  explicit Trajectory(std::vector<Vec> observations);
  Trajectory(std::vector<Vec> observations, std::vector<Vec> actions);

  std::size_t length() const { return observations_.size(); }
  const std::vector<Vec>& observations() const { return observations_; }
  bool has_actions() const { return actions_.has_value(); }
  // Throws ActionsUnavailable for observation-only trajectories.
  const std::vector<Vec>& actions() const;

  // Returns a copy with the actions dropped.
  Trajectory observations_only() const;

  // Test hook: any later call to actions() throws ContractError.
  void set_action_trap(bool on) { action_trap_ = on; }

  bool operator==(const Trajectory& other) const;

 private:
  std::vector<Vec> observations_;
  std::optional<std::vector<Vec>> actions_;
  bool action_trap_ = false;
};

enum class SegmentKind {
  kStateAction,   // (s_t, a_t)
  kStatePair,     // (s_t, s_{t+1})
  kStateSkip,     // (s_t, s_{t+k})
  kStateDelta,    // (s_t, s_{t+1} - s_t)
  kAffineWindow,  // T(s_t, ..., s_{t+w-1}); stacked states, transform applied later
};

struct SegmentSpec {
  SegmentKind kind = SegmentKind::kStatePair;
  int skip = 1;    // kStateSkip only
  int window = 4;  // kAffineWindow only

  static SegmentSpec state_action() { return {SegmentKind::kStateAction}; }
  static SegmentSpec state_pair() { return {SegmentKind::kStatePair}; }
  static SegmentSpec state_skip(int k);
  static SegmentSpec state_delta() { return {SegmentKind::kStateDelta}; }
  static SegmentSpec affine_window(int w = 4);

  bool uses_actions() const { return kind == SegmentKind::kStateAction; }
  // Number of observations after s_t a segment anchored at t needs. A
  // trajectory of L observations yields L - horizon() segments.
  int horizon() const;

  // StateSkip(1) compares equal to StatePair.
  bool operator==(const SegmentSpec& other) const;
};

// Tagged-string form used in run configs: state_action, state_pair,
// state_skip:K, state_delta, affine_window:W[:state_window].
SegmentSpec parse_segment_spec(const std::string& tag);
std::string to_string(const SegmentSpec& spec);

int segment_dim(const SegmentSpec& spec, int obs_dim, int act_dim);

enum class SegmentSource { kExpert, kLearner };

struct Segment {
  Vec values;
  SegmentSource source = SegmentSource::kLearner;
};

// Segment anchored at observation index t. `actions` may be empty unless the
// spec uses actions.
Vec build_segment(const SegmentSpec& spec, std::span<const Vec> observations,
                  std::span<const Vec> actions, std::size_t t);

std::vector<Segment> extract_segments(const Trajectory& traj, const SegmentSpec& spec,
                                      SegmentSource source = SegmentSource::kLearner);

// Segments from many trajectories stacked column-wise. Trajectories shorter
// than horizon() + 1 contribute nothing.
Batch segment_matrix(const std::vector<Trajectory>& trajs, const SegmentSpec& spec);

Batch to_batch(const std::vector<Segment>& segments);

// Elementwise affine map x -> scale .* x + shift.
struct AffineParams {
  Vec scale;
  Vec shift;
  bool trainable = false;

  static AffineParams identity(int dim);
  void validate() const;
};

struct AffineGrad {
  Vec grad_scale;
  Vec grad_shift;
  Vec grad_segment;
};

Segment affine_apply(const AffineParams& params, const Segment& segment);
Batch affine_apply(const AffineParams& params, const Batch& segments);
AffineGrad affine_grad(const AffineParams& params, const Segment& segment,
                       const Vec& upstream);

}  // namespace rail

#endif  // RAIL_REPRESENTATION_HPP_
