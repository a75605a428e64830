#include "rail/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "rail/errors.hpp"

namespace rail {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  std::uint64_t z = x + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kTrainStream = 0x747261696eULL;  // "train"
constexpr std::uint64_t kEvalStream = 0x6576616cULL;     // "eval"
constexpr std::uint64_t kEngineStream = 0x656e67ULL;     // "eng"

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ b); }

std::uint64_t training_episode_seed(std::uint64_t trial_seed, std::uint64_t episode) {
  return mix_seed(mix_seed(trial_seed, kTrainStream), episode);
}

std::uint64_t eval_episode_seed(std::uint64_t eval_seed, std::uint64_t episode) {
  return mix_seed(mix_seed(eval_seed, kEvalStream), episode);
}

void EngineConfig::validate() const {
  make_env(env);  // throws on unknown names
  disc.validate();
  backbone.validate();
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (total_steps < eval_every) throw ConfigError("total_steps must be >= eval_every");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (segment.kind == SegmentKind::kStateSkip && segment.skip < 1) {
    throw ConfigError("state_skip needs k >= 1");
  }
  if (segment.kind == SegmentKind::kAffineWindow && segment.window < 2) {
    throw ConfigError("affine_window needs a window >= 2");
  }
}

Schedule Schedule::from(const EngineConfig& cfg) {
  Schedule s;
  s.disc_update_every = cfg.disc.update_every;
  s.disc_rounds = cfg.disc.rounds_per_update;
  s.policy_updates_x = cfg.backbone.policy_updates;
  s.cycle_y = cfg.backbone.cycle_length;
  s.warmup_q_steps = cfg.backbone.warmup_q_steps;
  s.warmup_disc_steps = cfg.use_true_reward ? 0 : cfg.disc.warmup_steps;
  s.eval_every = cfg.eval_every;
  s.eval_episodes = cfg.eval_episodes;
  s.total_steps = cfg.total_steps;
  return s;
}

EvalResult evaluate(const PolicyParams& policy, const Env& env_prototype, int n_episodes,
                    std::uint64_t seed) {
  if (n_episodes < 1) throw ContractError("evaluate: n_episodes must be >= 1");
  auto env = env_prototype.clone();
  Rng unused(0);  // deterministic mode draws nothing
  EvalResult r;
  for (int i = 0; i < n_episodes; ++i) {
    Vec obs = env->reset(eval_episode_seed(seed, static_cast<std::uint64_t>(i)));
    double total = 0.0;
    for (;;) {
      const auto s = env->step(act(policy, obs, ActMode::kDeterministic, unused));
      total += s.reward;
      obs = s.next_obs;
      if (s.done()) break;
    }
    r.returns.push_back(total);
  }
  r.min = *std::min_element(r.returns.begin(), r.returns.end());
  r.max = *std::max_element(r.returns.begin(), r.returns.end());
  double sum = 0.0;
  for (double v : r.returns) sum += v;
  r.mean = sum / static_cast<double>(n_episodes);
  return r;
}

// ---- metrics serialization -------------------------------------------------

std::string metrics_to_jsonl(const TrialMetrics& m) {
  using J = nlohmann::ordered_json;
  std::string out;
  for (const auto& r : m.records) {
    J j;
    j["type"] = "eval";
    j["env_steps"] = r.env_steps;
    j["mean"] = r.mean;
    j["min"] = r.min;
    j["max"] = r.max;
    j["disc_loss"] = r.disc_loss;
    j["disc_bce_expert"] = r.disc_expert;
    j["disc_bce_learner"] = r.disc_learner;
    j["disc_gp"] = r.disc_gp;
    j["q_loss"] = r.q_loss;
    j["policy_loss"] = r.policy_loss;
    j["mean_logprob"] = r.mean_logprob;
    j["clip_fraction"] = r.clip_fraction;
    j["disc_updates"] = r.disc_updates;
    j["q_updates"] = r.q_updates;
    j["policy_updates"] = r.policy_updates;
    out += j.dump() + "\n";
  }
  J s;
  s["type"] = "summary";
  s["label"] = m.label;
  s["seed"] = m.seed;
  s["config_digest"] = m.config_digest;
  s["expert_return"] = m.expert_return;
  s["failed"] = m.failed;
  s["error"] = m.error;
  s["records"] = m.records.size();
  s["disc_updates"] = m.disc_updates;
  s["q_updates"] = m.q_updates;
  s["policy_updates"] = m.policy_updates;
  s["disc_skipped"] = m.disc_skipped;
  s["backbone_skipped"] = m.backbone_skipped;
  s["ppo_early_stops"] = m.ppo_early_stops;
  s["clipped_actions"] = m.clipped_actions;
  out += s.dump() + "\n";
  return out;
}

TrialMetrics metrics_from_jsonl(const std::string& text) {
  TrialMetrics m;
  bool summary = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("metrics: bad record: ") + e.what());
    }
    const auto type = j.value("type", "");
    if (type == "eval") {
      EvalRecord r;
      r.env_steps = j.at("env_steps").get<int>();
      r.mean = j.at("mean").get<double>();
      r.min = j.at("min").get<double>();
      r.max = j.at("max").get<double>();
      r.disc_loss = j.value("disc_loss", 0.0);
      r.disc_expert = j.value("disc_bce_expert", 0.0);
      r.disc_learner = j.value("disc_bce_learner", 0.0);
      r.disc_gp = j.value("disc_gp", 0.0);
      r.q_loss = j.value("q_loss", 0.0);
      r.policy_loss = j.value("policy_loss", 0.0);
      r.mean_logprob = j.value("mean_logprob", 0.0);
      r.clip_fraction = j.value("clip_fraction", 0.0);
      r.disc_updates = j.value("disc_updates", std::uint64_t{0});
      r.q_updates = j.value("q_updates", std::uint64_t{0});
      r.policy_updates = j.value("policy_updates", std::uint64_t{0});
      if (!m.records.empty() && r.env_steps <= m.records.back().env_steps) {
        throw FormatError("metrics: env_steps not strictly increasing");
      }
      m.records.push_back(r);
    } else if (type == "summary") {
      summary = true;
      m.label = j.value("label", "");
      m.seed = j.value("seed", std::uint64_t{0});
      m.config_digest = j.value("config_digest", "");
      m.expert_return = j.value("expert_return", 0.0);
      m.failed = j.value("failed", false);
      m.error = j.value("error", "");
      m.disc_updates = j.value("disc_updates", std::uint64_t{0});
      m.q_updates = j.value("q_updates", std::uint64_t{0});
      m.policy_updates = j.value("policy_updates", std::uint64_t{0});
      m.disc_skipped = j.value("disc_skipped", std::uint64_t{0});
      m.backbone_skipped = j.value("backbone_skipped", std::uint64_t{0});
      m.ppo_early_stops = j.value("ppo_early_stops", std::uint64_t{0});
      m.clipped_actions = j.value("clipped_actions", std::uint64_t{0});
    } else {
      throw FormatError("metrics: unknown record type '" + type + "'");
    }
  }
  if (!summary) throw FormatError("metrics: missing summary record");
  return m;
}

// ---- engine ----------------------------------------------------------------

Engine::Engine(EngineConfig cfg, std::shared_ptr<const DemoDataset> demos)
    : cfg_(std::move(cfg)), sched_(Schedule::from(cfg_)) {
  cfg_.validate();
  env_ = make_env(cfg_.env);
  eval_env_ = make_env(cfg_.env);
  rng_.seed(mix_seed(cfg_.seed, kEngineStream));
  const auto& es = env_->spec();
  const int seg_dim = segment_dim(cfg_.segment, es.obs_dim, es.act_dim);

  if (cfg_.segment.horizon() >= es.max_episode_steps) {
    throw ConfigError("representation " + to_string(cfg_.segment) + " spans a whole episode");
  }

  if (!cfg_.use_true_reward) {
    if (!demos) throw ContractError("engine: imitation run without a demo dataset");
    if (demos->env != cfg_.env || demos->obs_dim != es.obs_dim || demos->act_dim != es.act_dim) {
      throw ConfigError("engine: demo dataset recorded on '" + demos->env +
                        "' does not match env '" + cfg_.env + "'");
    }
    if (cfg_.segment.uses_actions()) {
      if (!demos->actions_included) {
        throw ActionsUnavailable("representation " + to_string(cfg_.segment) +
                                 " needs expert actions but the demo dataset is observation-only");
      }
      expert_segs_ = expert_segments(*demos, cfg_.segment);
    } else {
      // Observation-only representations never see the actions, whatever the
      // dataset holds.
      expert_segs_ = expert_segments(ObservationDataset(*demos), cfg_.segment);
    }
    if (expert_segs_.cols() == 0) throw ContractError("engine: demo dataset yields no segments");
    disc_ = make_disc_state(seg_dim, cfg_.disc, rng_);
  }
  if (cfg_.segment.kind == SegmentKind::kAffineWindow) affine_ = AffineParams::identity(seg_dim);

  const auto& b = cfg_.backbone;
  switch (b.algorithm) {
    case Algorithm::kSac:
      sac_ = make_sac_state(es, b, rng_);
      break;
    case Algorithm::kTd3:
      td3_ = make_td3_state(es, b, rng_);
      break;
    case Algorithm::kPpo:
      ppo_ = make_ppo_state(es, b, rng_);
      break;
  }
  if (off_policy()) {
    const auto cap = static_cast<std::size_t>(std::min(b.replay_capacity, cfg_.total_steps));
    if (cap <= static_cast<std::size_t>(cfg_.segment.horizon())) {
      throw ConfigError("replay capacity must exceed the segment horizon");
    }
    buffer_ = std::make_unique<ReplayBuffer>(cap, es.obs_dim, es.act_dim, seg_dim);
  } else {
    rollout_ = std::make_unique<RolloutBuilder>(es.obs_dim, es.act_dim,
                                                static_cast<std::size_t>(b.rollout_length));
    rollout_segments_.resize(seg_dim, b.rollout_length);
  }
  metrics_.seed = cfg_.seed;
  begin_episode();
}

Engine::~Engine() = default;

const PolicyParams& Engine::policy() const {
  if (sac_) return sac_->policy;
  if (td3_) return td3_->policy;
  return ppo_->policy;
}

std::uint64_t Engine::disc_updates() const {
  return disc_ ? disc_->updates_done + disc_->updates_skipped : 0;
}

std::uint64_t Engine::q_updates() const {
  if (sac_) return sac_->q_updates;
  if (td3_) return td3_->q_updates;
  return 0;
}

std::uint64_t Engine::policy_updates() const {
  if (sac_) return sac_->policy_updates;
  if (td3_) return td3_->policy_updates;
  return ppo_->updates;
}

void Engine::begin_episode() {
  obs_ = env_->reset(training_episode_seed(cfg_.seed, episodes_started_++));
  ep_obs_.assign(1, obs_);
  ep_act_.clear();
  ep_serial_.clear();
  ep_rollout_index_.clear();
}

Vec Engine::reward_for(const Batch& segments) const {
  if (cfg_.segment.kind == SegmentKind::kAffineWindow) {
    return imitation_rewards(disc_->params, affine_apply(affine_, segments), cfg_.disc);
  }
  return imitation_rewards(disc_->params, segments, cfg_.disc);
}

void Engine::record_segment_completion() {
  const auto h = static_cast<std::ptrdiff_t>(cfg_.segment.horizon());
  const auto anchor = static_cast<std::ptrdiff_t>(ep_obs_.size()) - 1 - h;
  if (anchor < 0) return;
  const auto a = static_cast<std::size_t>(anchor);
  const Vec seg = build_segment(cfg_.segment, ep_obs_, ep_act_, a);
  if (off_policy()) {
    buffer_->set_segment(ep_serial_[a], seg);
    return;
  }
  const auto idx = ep_rollout_index_[a];
  if (idx >= 0) rollout_->set_reward(static_cast<std::size_t>(idx), reward_for(seg)(0));
  if (rollout_segment_count_ < rollout_segments_.cols()) {
    rollout_segments_.col(rollout_segment_count_++) = seg;
  }
}

Batch Engine::sample_expert(int n) {
  std::uniform_int_distribution<Eigen::Index> pick(0, expert_segs_.cols() - 1);
  Batch b(expert_segs_.rows(), n);
  for (int j = 0; j < n; ++j) b.col(j) = expert_segs_.col(pick(rng_));
  return b;
}

Batch Engine::learner_segments(int n) {
  if (off_policy()) {
    if (buffer_->ready_count() == 0) return {};
    return buffer_->gather(buffer_->sample_indices(static_cast<std::size_t>(n), rng_, true)).segment;
  }
  const Batch* pool = nullptr;
  Eigen::Index count = 0;
  if (rollout_segment_count_ > 0) {
    pool = &rollout_segments_;
    count = rollout_segment_count_;
  } else if (previous_rollout_segments_.cols() > 0) {
    pool = &previous_rollout_segments_;
    count = previous_rollout_segments_.cols();
  }
  if (!pool) return {};
  std::uniform_int_distribution<Eigen::Index> pick(0, count - 1);
  Batch b(pool->rows(), n);
  for (int j = 0; j < n; ++j) b.col(j) = pool->col(pick(rng_));
  return b;
}

void Engine::disc_round() {
  Batch learner = learner_segments(cfg_.disc.batch_size);
  if (learner.cols() == 0) return;
  Batch expert = sample_expert(cfg_.disc.batch_size);
  if (cfg_.segment.kind == SegmentKind::kAffineWindow) {
    learner = affine_apply(affine_, learner);
    expert = affine_apply(affine_, expert);
  }
  last_disc_ = disc_update(*disc_, expert, learner, cfg_.disc, rng_);
}

void Engine::note_policy_update() {
  if (!disc_before_policy_) {
    disc_before_policy_ = disc_updates();
    q_before_policy_ = q_updates();
  }
}

void Engine::backbone_round(bool allow_policy) {
  RewardFn rf;
  if (!cfg_.use_true_reward) rf = [this](const Batch& s) { return reward_for(s); };
  // Recorded before the update so the count excludes the update itself.
  const auto q_before = q_updates();
  const auto d_before = disc_updates();
  BackboneLossReport rep;
  if (sac_) {
    rep = sac_update(*sac_, *buffer_, rf, cfg_.backbone, rng_, allow_policy);
  } else {
    rep = td3_update(*td3_, *buffer_, rf, cfg_.backbone, rng_, allow_policy);
  }
  if (rep.policy_updated && !disc_before_policy_) {
    disc_before_policy_ = d_before;
    q_before_policy_ = q_before;
  }
  last_backbone_ = rep;
}

void Engine::ppo_round() {
  Rollout ro = rollout_->finish();
  for (auto& i : ep_rollout_index_) i = -1;
  const auto rep = ppo_update(*ppo_, ro, cfg_.backbone, rng_);
  if (rep.policy_updated) note_policy_update();
  last_backbone_ = rep;
  previous_rollout_segments_ = rollout_segments_.leftCols(rollout_segment_count_);
  rollout_segment_count_ = 0;
}

void Engine::run_warmup() {
  if (disc_) {
    for (int i = 0; i < sched_.warmup_disc_steps; ++i) disc_round();
  }
  if (off_policy()) {
    for (int i = 0; i < sched_.warmup_q_steps; ++i) backbone_round(false);
  }
  warmed_up_ = true;
  warmup_at_ = steps_;
}

void Engine::maybe_warmup() {
  if (warmed_up_ || !off_policy()) return;
  if (steps_ < cfg_.backbone.start_steps) return;
  if (buffer_->size() < static_cast<std::size_t>(cfg_.backbone.batch_size)) return;
  if (!cfg_.use_true_reward && buffer_->ready_count() == 0) return;
  run_warmup();
}

void Engine::do_eval() {
  const auto e = evaluate_now();
  EvalRecord r;
  r.env_steps = steps_;
  r.mean = e.mean;
  r.min = e.min;
  r.max = e.max;
  r.disc_loss = last_disc_.total;
  r.disc_expert = last_disc_.bce_expert;
  r.disc_learner = last_disc_.bce_learner;
  r.disc_gp = last_disc_.grad_penalty;
  r.q_loss = last_backbone_.q_loss;
  r.policy_loss = last_backbone_.policy_loss;
  r.mean_logprob = last_backbone_.mean_logprob;
  r.clip_fraction = last_backbone_.clip_fraction;
  r.disc_updates = disc_updates();
  r.q_updates = q_updates();
  r.policy_updates = policy_updates();
  metrics_.records.push_back(r);
  if (on_eval && on_eval(r)) stop_ = true;
}

EvalResult Engine::evaluate_now() const {
  return evaluate(policy(), *eval_env_, cfg_.eval_episodes, cfg_.eval_seed);
}

void Engine::step() {
  const auto& es = env_->spec();
  Vec action, pre;
  double logp = 0.0;
  if (off_policy() && steps_ < cfg_.backbone.start_steps) {
    action.resize(es.act_dim);
    for (int i = 0; i < es.act_dim; ++i) {
      std::uniform_real_distribution<double> u(es.action_low(i), es.action_high(i));
      action(i) = u(rng_);
    }
  } else {
    auto s = sample_action(policy(), obs_, ActMode::kStochastic, rng_);
    action = std::move(s.action);
    pre = std::move(s.pre_squash);
    logp = s.logprob;
  }
  const StepResult r = env_->step(action);
  ++steps_;

  if (off_policy()) {
    const double slot = cfg_.use_true_reward ? r.reward : std::numeric_limits<double>::quiet_NaN();
    ep_serial_.push_back(buffer_->push(obs_, action, slot, r.next_obs, r.terminated, r.truncated));
  } else {
    rollout_->push(obs_, pre, logp, cfg_.use_true_reward ? r.reward : 0.0, r.next_obs,
                   r.terminated, r.truncated);
    ep_rollout_index_.push_back(static_cast<std::ptrdiff_t>(rollout_->size()) - 1);
  }
  ep_act_.push_back(action);
  ep_obs_.push_back(r.next_obs);
  if (!cfg_.use_true_reward) record_segment_completion();
  obs_ = r.next_obs;
  if (r.done()) begin_episode();

  maybe_warmup();
  if (warmed_up_ && steps_ > warmup_at_) {
    if (disc_ && steps_ % sched_.disc_update_every == 0) {
      for (int i = 0; i < sched_.disc_rounds; ++i) disc_round();
    }
    if (off_policy() && steps_ % sched_.cycle_y == 0) {
      for (int i = 0; i < sched_.policy_updates_x; ++i) backbone_round(true);
    }
  }
  if (!off_policy() && rollout_->full()) {
    if (!warmed_up_) run_warmup();
    ppo_round();
  }
  if (steps_ % sched_.eval_every == 0) do_eval();
}

TrialMetrics Engine::run() {
  while (steps_ < cfg_.total_steps && !stop_) step();
  metrics_.disc_updates = disc_updates();
  metrics_.q_updates = q_updates();
  metrics_.policy_updates = policy_updates();
  metrics_.disc_skipped = disc_ ? disc_->updates_skipped : 0;
  metrics_.backbone_skipped = sac_ ? sac_->skipped : td3_ ? td3_->skipped : ppo_->skipped;
  metrics_.ppo_early_stops = ppo_ ? ppo_->early_stops : 0;
  metrics_.clipped_actions = env_->clipped_actions();
  return metrics_;
}

}  // namespace rail
