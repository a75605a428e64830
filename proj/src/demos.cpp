#include "rail/demos.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rail/engine.hpp"
#include "rail/errors.hpp"

namespace rail {

std::size_t DemoDataset::transitions() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.length() > 0 ? e.length() - 1 : 0;
  return n;
}

DemoDataset DemoDataset::observations_only() const {
  DemoDataset d = *this;
  for (auto& e : d.episodes) e = e.observations_only();
  d.actions_included = false;
  return d;
}

void DemoDataset::validate() const {
  if (obs_dim <= 0 || act_dim <= 0) throw FormatError("demo dataset: bad dimensions");
  for (const auto& e : episodes) {
    if (e.length() < 2) throw FormatError("demo dataset: episode shorter than one transition");
    if (e.has_actions() != actions_included) {
      throw FormatError("demo dataset: actions present iff actions_included");
    }
    for (const auto& o : e.observations()) {
      if (o.size() != obs_dim) throw FormatError("demo dataset: observation dim mismatch");
    }
    if (actions_included) {
      for (const auto& a : e.actions()) {
        if (a.size() != act_dim) throw FormatError("demo dataset: action dim mismatch");
      }
    }
  }
}

bool DemoDataset::operator==(const DemoDataset& o) const {
  return env == o.env && obs_dim == o.obs_dim && act_dim == o.act_dim &&
         episodes == o.episodes && actions_included == o.actions_included &&
         expert_mean_return == o.expert_mean_return && seed == o.seed &&
         episode_returns == o.episode_returns;
}

ObservationDataset::ObservationDataset(const DemoDataset& demos)
    : env_(demos.env), obs_dim_(demos.obs_dim) {
  episodes_.reserve(demos.episodes.size());
  for (const auto& e : demos.episodes) episodes_.push_back(e.observations());
}

Batch expert_segments(const ObservationDataset& demos, const SegmentSpec& spec) {
  if (spec.uses_actions()) throw ActionsUnavailable("observation-only expert data");
  const auto h = static_cast<std::size_t>(spec.horizon());
  std::size_t total = 0;
  for (std::size_t e = 0; e < demos.episodes(); ++e) {
    const auto L = demos.observations(e).size();
    if (L > h) total += L - h;
  }
  Batch out(segment_dim(spec, demos.obs_dim(), 1), static_cast<Eigen::Index>(total));
  Eigen::Index col = 0;
  for (std::size_t e = 0; e < demos.episodes(); ++e) {
    const auto& obs = demos.observations(e);
    for (std::size_t t = 0; t + h < obs.size(); ++t) out.col(col++) = build_segment(spec, obs, {}, t);
  }
  return out;
}

Batch expert_segments(const DemoDataset& demos, const SegmentSpec& spec) {
  if (!spec.uses_actions()) return expert_segments(ObservationDataset(demos), spec);
  return segment_matrix(demos.episodes, spec);
}

DemoDataset record_demos(const PolicyParams& policy, Env& env, int n_episodes,
                         bool include_actions, std::uint64_t seed) {
  if (n_episodes < 1) throw ContractError("record_demos: n_episodes must be >= 1");
  DemoDataset d;
  d.env = env.spec().name;
  d.obs_dim = env.spec().obs_dim;
  d.act_dim = env.spec().act_dim;
  d.actions_included = include_actions;
  d.seed = seed;
  Rng unused(0);
  double sum = 0.0;
  for (int i = 0; i < n_episodes; ++i) {
    std::vector<Vec> obs{env.reset(mix_seed(seed, static_cast<std::uint64_t>(i)))};
    std::vector<Vec> acts;
    double ret = 0.0;
    for (;;) {
      Vec a = act(policy, obs.back(), ActMode::kDeterministic, unused);
      const auto r = env.step(a);
      ret += r.reward;
      acts.push_back(std::move(a));
      obs.push_back(r.next_obs);
      if (r.done()) break;
    }
    d.episodes.push_back(include_actions ? Trajectory(std::move(obs), std::move(acts))
                                         : Trajectory(std::move(obs)));
    d.episode_returns.push_back(ret);
    sum += ret;
  }
  d.expert_mean_return = sum / n_episodes;
  return d;
}

// ---- demo file ---------------------------------------------------------------

namespace {

constexpr int kDemoVersion = 1;

void write_vec(std::ostream& out, const Vec& v) {
  char buf[40];
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", v(i));
    if (i) out << ' ';
    out << buf;
  }
}

Vec read_vec(const std::string& field, int dim, std::size_t line_no) {
  Vec v(dim);
  const char* p = field.c_str();
  for (int i = 0; i < dim; ++i) {
    char* end = nullptr;
    v(i) = std::strtod(p, &end);
    if (end == p) {
      throw FormatError("demo file line " + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " numbers");
    }
    p = end;
  }
  while (*p == ' ') ++p;
  if (*p != '\0') throw FormatError("demo file line " + std::to_string(line_no) + ": extra values");
  if (!v.allFinite()) throw FormatError("demo file line " + std::to_string(line_no) + ": non-finite value");
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

void save_demos(std::ostream& out, const DemoDataset& d) {
  d.validate();
  nlohmann::ordered_json h;
  h["format"] = "rail-demo";
  h["version"] = kDemoVersion;
  h["env"] = d.env;
  h["obs_dim"] = d.obs_dim;
  h["act_dim"] = d.act_dim;
  h["actions_included"] = d.actions_included;
  h["episodes"] = d.episodes.size();
  h["transitions"] = d.transitions();
  h["expert_mean_return"] = d.expert_mean_return;
  h["seed"] = d.seed;
  h["episode_returns"] = d.episode_returns;
  out << h.dump() << '\n';
  for (std::size_t e = 0; e < d.episodes.size(); ++e) {
    const auto& tr = d.episodes[e];
    const auto& obs = tr.observations();
    for (std::size_t t = 0; t + 1 < obs.size(); ++t) {
      out << e << '\t' << t << '\t';
      write_vec(out, obs[t]);
      if (d.actions_included) {
        out << '\t';
        write_vec(out, tr.actions()[t]);
      }
      out << '\t';
      write_vec(out, obs[t + 1]);
      out << '\n';
    }
  }
  if (!out) throw FormatError("demo file: write failed");
}

DemoDataset load_demos(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("demo file: missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("demo file: bad header: ") + e.what());
  }
  DemoDataset d;
  std::size_t n_episodes = 0, n_transitions = 0;
  try {
    if (h.at("format").get<std::string>() != "rail-demo") throw FormatError("demo file: wrong format tag");
    const int version = h.at("version").get<int>();
    if (version != kDemoVersion) {
      throw FormatError("demo file: unsupported version " + std::to_string(version));
    }
    d.env = h.at("env").get<std::string>();
    d.obs_dim = h.at("obs_dim").get<int>();
    d.act_dim = h.at("act_dim").get<int>();
    d.actions_included = h.at("actions_included").get<bool>();
    n_episodes = h.at("episodes").get<std::size_t>();
    n_transitions = h.at("transitions").get<std::size_t>();
    d.expert_mean_return = h.at("expert_mean_return").get<double>();
    d.seed = h.at("seed").get<std::uint64_t>();
    d.episode_returns = h.at("episode_returns").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("demo file: bad header field: ") + e.what());
  }
  if (d.obs_dim <= 0 || d.act_dim <= 0) throw FormatError("demo file: bad dimensions");

  const std::size_t columns = d.actions_included ? 5 : 4;
  std::vector<std::vector<Vec>> obs(n_episodes), acts(n_episodes);
  std::size_t seen = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != columns) {
      throw FormatError("demo file line " + std::to_string(line_no) + ": expected " +
                        std::to_string(columns) + " tab-separated fields");
    }
    std::size_t e = 0, t = 0;
    try {
      e = std::stoul(f[0]);
      t = std::stoul(f[1]);
    } catch (const std::exception&) {
      throw FormatError("demo file line " + std::to_string(line_no) + ": bad indices");
    }
    if (e >= n_episodes) throw FormatError("demo file line " + std::to_string(line_no) + ": episode out of range");
    auto& o = obs[e];
    if (t + 1 != std::max<std::size_t>(o.size(), 1) || (o.empty() && t != 0)) {
      throw FormatError("demo file line " + std::to_string(line_no) + ": transitions out of order");
    }
    Vec s = read_vec(f[2], d.obs_dim, line_no);
    Vec s2 = read_vec(f.back(), d.obs_dim, line_no);
    if (o.empty()) {
      o.push_back(std::move(s));
    } else if (o.back() != s) {
      throw FormatError("demo file line " + std::to_string(line_no) + ": state does not continue the episode");
    }
    o.push_back(std::move(s2));
    if (d.actions_included) acts[e].push_back(read_vec(f[3], d.act_dim, line_no));
    ++seen;
  }
  if (seen != n_transitions) {
    throw FormatError("demo file: truncated (" + std::to_string(seen) + " of " +
                      std::to_string(n_transitions) + " transitions)");
  }
  for (std::size_t e = 0; e < n_episodes; ++e) {
    if (obs[e].size() < 2) throw FormatError("demo file: episode " + std::to_string(e) + " is missing");
    d.episodes.push_back(d.actions_included ? Trajectory(std::move(obs[e]), std::move(acts[e]))
                                            : Trajectory(std::move(obs[e])));
  }
  if (d.episode_returns.size() != n_episodes) throw FormatError("demo file: episode_returns size mismatch");
  d.validate();
  return d;
}

void save_demos(const std::string& path, const DemoDataset& demos) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_demos(out, demos);
}

DemoDataset load_demos(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  return load_demos(in);
}

DemoDataset load_demos(const std::string& path, const EnvSpec& env) {
  auto d = load_demos(path);
  if (d.env != env.name || d.obs_dim != env.obs_dim || d.act_dim != env.act_dim) {
    throw FormatError("demo file " + path + " does not match environment " + env.name);
  }
  return d;
}

// ---- experts -----------------------------------------------------------------

ExpertResult train_expert(const std::string& env_name, const BackboneConfig& cfg,
                          const ExpertOptions& opts) {
  if (cfg.algorithm != Algorithm::kSac) throw ConfigError("train_expert: SAC backbone required");
  EngineConfig ec;
  ec.env = env_name;
  ec.backbone = cfg;
  ec.use_true_reward = true;
  ec.total_steps = opts.step_budget;
  ec.eval_every = opts.eval_every;
  ec.eval_episodes = opts.eval_episodes;
  ec.seed = opts.seed;
  Engine engine(ec, nullptr);
  ExpertResult best;
  bool have = false;
  engine.on_eval = [&](const EvalRecord& r) {
    if (!have || r.mean > best.eval_return) {
      best.policy = engine.policy();
      best.eval_return = r.mean;
      best.env_steps = r.env_steps;
      have = true;
    }
    if (r.mean >= opts.target_return) {
      best.reached_target = true;
      return true;
    }
    return false;
  };
  engine.run();
  if (!have) throw ContractError("train_expert: budget too small for a single evaluation");
  if (!best.reached_target) {
    const double floor = opts.target_return - 0.2 * std::abs(opts.target_return);
    std::ostringstream msg;
    msg << "expert target " << opts.target_return << " not reached; best " << best.eval_return
        << " at step " << best.env_steps;
    if (best.eval_return < floor) throw Error("train_expert failed: " + msg.str());
    best.warning = msg.str();
  }
  return best;
}

// ---- policy checkpoint -------------------------------------------------------

namespace {

constexpr char kPolicyMagic[8] = {'R', 'A', 'I', 'L', 'P', 'O', 'L', '\0'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == EOF) throw FormatError("policy checkpoint: truncated");
    v |= static_cast<std::uint32_t>(c & 0xFF) << (8 * i);
  }
  return v;
}

double get_f64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw FormatError("policy checkpoint: truncated");
    v |= static_cast<std::uint64_t>(c & 0xFF) << (8 * i);
  }
  return std::bit_cast<double>(v);
}

}  // namespace

void save_policy(const std::string& path, const PolicyParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.write(kPolicyMagic, 8);
  put_u32(out, 1);
  put_u32(out, p.kind == PolicyKind::kSquashedGaussian ? 0 : 1);
  put_u32(out, static_cast<std::uint32_t>(p.act_dim()));
  for (int i = 0; i < p.act_dim(); ++i) put_f64(out, p.action_low(i));
  for (int i = 0; i < p.act_dim(); ++i) put_f64(out, p.action_high(i));
  put_f64(out, p.explore_noise);
  save_mlp(out, p.net);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kPolicyMagic)) {
    throw FormatError("policy checkpoint: bad magic");
  }
  if (get_u32(in) != 1) throw FormatError("policy checkpoint: unsupported version");
  PolicyParams p;
  const auto kind = get_u32(in);
  if (kind > 1) throw FormatError("policy checkpoint: unknown kind");
  p.kind = kind == 0 ? PolicyKind::kSquashedGaussian : PolicyKind::kDeterministic;
  const auto ad = static_cast<int>(get_u32(in));
  if (ad <= 0 || ad > 1024) throw FormatError("policy checkpoint: bad action dim");
  p.action_low.resize(ad);
  p.action_high.resize(ad);
  for (int i = 0; i < ad; ++i) p.action_low(i) = get_f64(in);
  for (int i = 0; i < ad; ++i) p.action_high(i) = get_f64(in);
  p.explore_noise = get_f64(in);
  p.net = load_mlp(in);
  const int expected_out = p.kind == PolicyKind::kSquashedGaussian ? 2 * ad : ad;
  if (p.net.output_dim() != expected_out) throw FormatError("policy checkpoint: head size mismatch");
  return p;
}

}  // namespace rail
