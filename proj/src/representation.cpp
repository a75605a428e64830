#include "rail/representation.hpp"

#include <charconv>
#include <sstream>

#include "rail/errors.hpp"

namespace rail {

Trajectory::Trajectory(std::vector<Vec> observations)
    : observations_(std::move(observations)) {}

Trajectory::Trajectory(std::vector<Vec> observations, std::vector<Vec> actions)
    : observations_(std::move(observations)), actions_(std::move(actions)) {
  if (!observations_.empty() && actions_->size() + 1 != observations_.size()) {
    throw ShapeError("trajectory: expected " + std::to_string(observations_.size() - 1) +
                     " actions, got " + std::to_string(actions_->size()));
  }
}

const std::vector<Vec>& Trajectory::actions() const {
  if (action_trap_) throw ContractError("trajectory: trapped action access");
  if (!actions_) throw ActionsUnavailable("observation-only trajectory");
  return *actions_;
}

Trajectory Trajectory::observations_only() const { return Trajectory(observations_); }

bool Trajectory::operator==(const Trajectory& other) const {
  if (observations_ != other.observations_) return false;
  if (actions_.has_value() != other.actions_.has_value()) return false;
  return !actions_ || *actions_ == *other.actions_;
}

SegmentSpec SegmentSpec::state_skip(int k) {
  if (k < 1) throw ConfigError("state_skip: k must be >= 1");
  SegmentSpec s{SegmentKind::kStateSkip};
  s.skip = k;
  return s;
}

SegmentSpec SegmentSpec::affine_window(int w) {
  if (w < 2) throw ConfigError("affine_window: window must be >= 2");
  SegmentSpec s{SegmentKind::kAffineWindow};
  s.window = w;
  return s;
}

int SegmentSpec::horizon() const {
  switch (kind) {
    case SegmentKind::kStateAction:
    case SegmentKind::kStatePair:
    case SegmentKind::kStateDelta:
      return 1;
    case SegmentKind::kStateSkip:
      return skip;
    case SegmentKind::kAffineWindow:
      return window - 1;
  }
  return 1;
}

namespace {

SegmentKind canonical_kind(const SegmentSpec& s) {
  if (s.kind == SegmentKind::kStateSkip && s.skip == 1) return SegmentKind::kStatePair;
  return s.kind;
}

int parse_int(const std::string& text, const std::string& tag) {
  int v = 0;
  auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || p != text.data() + text.size()) {
    throw ConfigError("segment spec '" + tag + "': bad integer '" + text + "'");
  }
  return v;
}

}  // namespace

bool SegmentSpec::operator==(const SegmentSpec& other) const {
  const auto a = canonical_kind(*this);
  if (a != canonical_kind(other)) return false;
  if (a == SegmentKind::kStateSkip) return skip == other.skip;
  if (a == SegmentKind::kAffineWindow) return window == other.window;
  return true;
}

SegmentSpec parse_segment_spec(const std::string& tag) {
  std::vector<std::string> parts;
  std::stringstream ss(tag);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.empty()) throw ConfigError("empty segment spec");
  const auto& head = parts[0];
  auto require = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) {
      throw ConfigError("segment spec '" + tag + "': wrong number of fields");
    }
  };
  if (head == "state_action") {
    require(1, 1);
    return SegmentSpec::state_action();
  }
  if (head == "state_pair") {
    require(1, 1);
    return SegmentSpec::state_pair();
  }
  if (head == "state_delta") {
    require(1, 1);
    return SegmentSpec::state_delta();
  }
  if (head == "state_skip") {
    require(2, 2);
    return SegmentSpec::state_skip(parse_int(parts[1], tag));
  }
  if (head == "affine_window") {
    require(1, 3);
    if (parts.size() == 3 && parts[2] != "state_window") {
      throw ConfigError("segment spec '" + tag + "': affine_window base must be state_window");
    }
    return SegmentSpec::affine_window(parts.size() >= 2 ? parse_int(parts[1], tag) : 4);
  }
  throw ConfigError("unknown segment spec '" + tag + "'");
}

std::string to_string(const SegmentSpec& spec) {
  switch (spec.kind) {
    case SegmentKind::kStateAction:
      return "state_action";
    case SegmentKind::kStatePair:
      return "state_pair";
    case SegmentKind::kStateSkip:
      return "state_skip:" + std::to_string(spec.skip);
    case SegmentKind::kStateDelta:
      return "state_delta";
    case SegmentKind::kAffineWindow:
      return "affine_window:" + std::to_string(spec.window) + ":state_window";
  }
  return "?";
}

int segment_dim(const SegmentSpec& spec, int obs_dim, int act_dim) {
  if (obs_dim <= 0 || act_dim <= 0) throw ShapeError("segment_dim: dims must be positive");
  switch (spec.kind) {
    case SegmentKind::kStateAction:
      return obs_dim + act_dim;
    case SegmentKind::kStatePair:
    case SegmentKind::kStateSkip:
    case SegmentKind::kStateDelta:
      return 2 * obs_dim;
    case SegmentKind::kAffineWindow:
      return spec.window * obs_dim;
  }
  return 0;
}

Vec build_segment(const SegmentSpec& spec, std::span<const Vec> obs,
                  std::span<const Vec> actions, std::size_t t) {
  const auto h = static_cast<std::size_t>(spec.horizon());
  if (t + h >= obs.size()) throw ContractError("build_segment: anchor past trajectory end");
  const Eigen::Index d = obs[t].size();
  switch (spec.kind) {
    case SegmentKind::kStateAction: {
      if (t >= actions.size()) throw ActionsUnavailable("no action recorded at step " + std::to_string(t));
      const Vec& a = actions[t];
      Vec v(d + a.size());
      v << obs[t], a;
      return v;
    }
    case SegmentKind::kStatePair:
    case SegmentKind::kStateSkip: {
      Vec v(2 * d);
      v << obs[t], obs[t + h];
      return v;
    }
    case SegmentKind::kStateDelta: {
      Vec v(2 * d);
      v << obs[t], obs[t + 1] - obs[t];
      return v;
    }
    case SegmentKind::kAffineWindow: {
      Vec v(static_cast<Eigen::Index>(spec.window) * d);
      for (int i = 0; i < spec.window; ++i) v.segment(i * d, d) = obs[t + i];
      return v;
    }
  }
  return {};
}

std::vector<Segment> extract_segments(const Trajectory& traj, const SegmentSpec& spec,
                                      SegmentSource source) {
  const auto h = static_cast<std::size_t>(spec.horizon());
  const auto L = traj.length();
  if (L < h + 1) {
    throw ContractError("extract_segments: trajectory of length " + std::to_string(L) +
                        " is shorter than " + to_string(spec) + " requires");
  }
  std::span<const Vec> actions;
  if (spec.uses_actions()) actions = traj.actions();  // throws for IfO data
  std::vector<Segment> out;
  out.reserve(L - h);
  for (std::size_t t = 0; t + h < L; ++t) {
    out.push_back({build_segment(spec, traj.observations(), actions, t), source});
  }
  return out;
}

Batch segment_matrix(const std::vector<Trajectory>& trajs, const SegmentSpec& spec) {
  std::vector<Segment> all;
  for (const auto& tr : trajs) {
    if (tr.length() < static_cast<std::size_t>(spec.horizon()) + 1) continue;
    auto segs = extract_segments(tr, spec, SegmentSource::kExpert);
    all.insert(all.end(), std::make_move_iterator(segs.begin()),
               std::make_move_iterator(segs.end()));
  }
  return to_batch(all);
}

Batch to_batch(const std::vector<Segment>& segments) {
  if (segments.empty()) return {};
  Batch b(segments[0].values.size(), static_cast<Eigen::Index>(segments.size()));
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].values.size() != b.rows()) throw ShapeError("to_batch: ragged segments");
    b.col(static_cast<Eigen::Index>(i)) = segments[i].values;
  }
  return b;
}

AffineParams AffineParams::identity(int dim) {
  return {Vec::Ones(dim), Vec::Zero(dim), false};
}

void AffineParams::validate() const {
  if (scale.size() != shift.size()) throw ShapeError("affine: scale/shift size mismatch");
  if (!((scale.array() > 0.0).all())) {
    throw ContractError("affine: scale must be strictly positive");
  }
}

Segment affine_apply(const AffineParams& params, const Segment& segment) {
  params.validate();
  if (segment.values.size() != params.scale.size()) throw ShapeError("affine_apply: dim mismatch");
  return {(params.scale.array() * segment.values.array() + params.shift.array()).matrix(),
          segment.source};
}

Batch affine_apply(const AffineParams& params, const Batch& segments) {
  params.validate();
  if (segments.rows() != params.scale.size()) throw ShapeError("affine_apply: dim mismatch");
  Batch out = params.scale.asDiagonal() * segments;
  out.colwise() += params.shift;
  return out;
}

AffineGrad affine_grad(const AffineParams& params, const Segment& segment,
                       const Vec& upstream) {
  params.validate();
  const auto n = params.scale.size();
  if (segment.values.size() != n || upstream.size() != n) {
    throw ShapeError("affine_grad: dim mismatch");
  }
  return {(segment.values.array() * upstream.array()).matrix(), upstream,
          (params.scale.array() * upstream.array()).matrix()};
}

}  // namespace rail
