#include "rail/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "rail/errors.hpp"

namespace rail {

namespace {

enum class FieldType { kInt, kUint, kFloat, kBool, kString, kList };

const char* type_name(FieldType t) {
  switch (t) {
    case FieldType::kInt: return "int";
    case FieldType::kUint: return "uint";
    case FieldType::kFloat: return "float";
    case FieldType::kBool: return "bool";
    case FieldType::kString: return "string";
    case FieldType::kList: return "list";
  }
  return "?";
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos, 0);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_float(const std::string& v, const std::string& key) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

int to_int(long long v, const std::string& key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw ConfigError(key + ": out of range");
  }
  return static_cast<int>(v);
}

struct Field {
  std::string section;
  std::string key;
  FieldType type;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool in_digest = true;

  std::string dotted() const { return section + "." + key; }
};

#define RAIL_INT(S, K, M)                                                              \
  Field{S, K, FieldType::kInt, [](const RunConfig& c) { return std::to_string(c.M); }, \
        [](RunConfig& c, const std::string& v) { c.M = to_int(parse_int(v, K), K); }}
#define RAIL_UINT(S, K, M)                                                              \
  Field{S, K, FieldType::kUint, [](const RunConfig& c) { return std::to_string(c.M); }, \
        [](RunConfig& c, const std::string& v) { c.M = parse_uint(v, K); }}
#define RAIL_FLOAT(S, K, M)                                                          \
  Field{S, K, FieldType::kFloat, [](const RunConfig& c) { return fmt_double(c.M); }, \
        [](RunConfig& c, const std::string& v) { c.M = parse_float(v, K); }}
#define RAIL_BOOL(S, K, M)                                                                     \
  Field{S, K, FieldType::kBool, [](const RunConfig& c) { return c.M ? "true" : "false"; }, \
        [](RunConfig& c, const std::string& v) { c.M = parse_bool(v, K); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"run", "env", FieldType::kString, [](const RunConfig& c) { return c.engine.env; },
                 [](RunConfig& c, const std::string& v) { c.engine.env = v; }});
    f.push_back({"run", "preset", FieldType::kString, [](const RunConfig& c) { return c.preset; },
                 [](RunConfig& c, const std::string& v) { c.preset = v; }});
    f.push_back({"run", "label", FieldType::kString, [](const RunConfig& c) { return c.label; },
                 [](RunConfig& c, const std::string& v) { c.label = v; }, false});
    f.push_back({"run", "demos", FieldType::kString, [](const RunConfig& c) { return c.demo_path; },
                 [](RunConfig& c, const std::string& v) { c.demo_path = v; }});
    f.push_back(RAIL_INT("run", "demo_episodes", demo_episodes));
    f.push_back({"run", "seeds", FieldType::kList,
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) {
                     if (i) s += ' ';
                     s += std::to_string(c.seeds[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.seeds.clear();
                   std::string spaced = v;
                   std::replace(spaced.begin(), spaced.end(), ',', ' ');
                   std::istringstream in(spaced);
                   std::string tok;
                   while (in >> tok) c.seeds.push_back(parse_uint(tok, "seeds"));
                 },
                 false});
    f.push_back({"run", "out", FieldType::kString, [](const RunConfig& c) { return c.out_dir; },
                 [](RunConfig& c, const std::string& v) { c.out_dir = v; }, false});

    f.push_back({"engine", "representation", FieldType::kString,
                 [](const RunConfig& c) { return to_string(c.engine.segment); },
                 [](RunConfig& c, const std::string& v) { c.engine.segment = parse_segment_spec(v); }});
    f.push_back(RAIL_INT("engine", "total_steps", engine.total_steps));
    f.push_back(RAIL_INT("engine", "eval_every", engine.eval_every));
    f.push_back(RAIL_INT("engine", "eval_episodes", engine.eval_episodes));
    f.push_back(RAIL_UINT("engine", "eval_seed", engine.eval_seed));

    f.push_back(RAIL_FLOAT("discriminator", "learning_rate", engine.disc.learning_rate));
    f.push_back(RAIL_FLOAT("discriminator", "entropy_coeff", engine.disc.entropy_coeff));
    f.push_back(RAIL_FLOAT("discriminator", "grad_penalty", engine.disc.grad_penalty_coeff));
    f.push_back(RAIL_INT("discriminator", "batch_size", engine.disc.batch_size));
    f.push_back(RAIL_INT("discriminator", "update_every", engine.disc.update_every));
    f.push_back(RAIL_INT("discriminator", "warmup_steps", engine.disc.warmup_steps));
    f.push_back(RAIL_INT("discriminator", "rounds_per_update", engine.disc.rounds_per_update));
    f.push_back(RAIL_INT("discriminator", "hidden", engine.disc.hidden));
    f.push_back({"discriminator", "reward", FieldType::kString,
                 [](const RunConfig& c) { return to_string(c.engine.disc.reward_mapping); },
                 [](RunConfig& c, const std::string& v) {
                   c.engine.disc.reward_mapping = parse_reward_mapping(v);
                 }});
    f.push_back(RAIL_FLOAT("discriminator", "reward_clip", engine.disc.reward_clip));

    f.push_back({"backbone", "algorithm", FieldType::kString,
                 [](const RunConfig& c) { return to_string(c.engine.backbone.algorithm); },
                 [](RunConfig& c, const std::string& v) {
                   c.engine.backbone.algorithm = parse_algorithm(v);
                 }});
    f.push_back(RAIL_FLOAT("backbone", "gamma", engine.backbone.gamma));
    f.push_back(RAIL_INT("backbone", "batch_size", engine.backbone.batch_size));
    f.push_back(RAIL_FLOAT("backbone", "alpha", engine.backbone.alpha));
    f.push_back(RAIL_BOOL("backbone", "auto_alpha", engine.backbone.auto_alpha));
    f.push_back(RAIL_FLOAT("backbone", "tau", engine.backbone.tau));
    f.push_back(RAIL_FLOAT("backbone", "policy_lr", engine.backbone.policy_lr));
    f.push_back(RAIL_FLOAT("backbone", "q_lr", engine.backbone.q_lr));
    f.push_back(RAIL_INT("backbone", "hidden", engine.backbone.hidden));
    f.push_back(RAIL_INT("backbone", "replay_capacity", engine.backbone.replay_capacity));
    f.push_back(RAIL_INT("backbone", "start_steps", engine.backbone.start_steps));
    f.push_back(RAIL_INT("backbone", "policy_delay", engine.backbone.policy_delay));
    f.push_back(RAIL_FLOAT("backbone", "target_noise", engine.backbone.target_noise));
    f.push_back(RAIL_FLOAT("backbone", "noise_clip", engine.backbone.noise_clip));
    f.push_back(RAIL_FLOAT("backbone", "explore_noise", engine.backbone.explore_noise));
    f.push_back(RAIL_FLOAT("backbone", "clip_ratio", engine.backbone.clip_ratio));
    f.push_back(RAIL_FLOAT("backbone", "gae_lambda", engine.backbone.gae_lambda));
    f.push_back(RAIL_INT("backbone", "epochs", engine.backbone.epochs));
    f.push_back(RAIL_INT("backbone", "rollout_length", engine.backbone.rollout_length));
    f.push_back(RAIL_FLOAT("backbone", "value_lr", engine.backbone.value_lr));

    f.push_back(RAIL_INT("schedule", "policy_updates", engine.backbone.policy_updates));
    f.push_back(RAIL_INT("schedule", "cycle_length", engine.backbone.cycle_length));
    f.push_back(RAIL_INT("schedule", "warmup_q_steps", engine.backbone.warmup_q_steps));
    return f;
  }();
  return table;
}

#undef RAIL_INT
#undef RAIL_UINT
#undef RAIL_FLOAT
#undef RAIL_BOOL

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError("unknown config key " + section + "." + key);
}

std::string render_fields(const RunConfig& cfg, bool digest_only) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (digest_only && !f.in_digest) continue;
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + ":" + type_name(f.type) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  engine.validate();
  if (demo_episodes < 1) throw ConfigError("demo_episodes must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key:type = value");
    const std::string lhs = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto colon = lhs.find(':');
    if (colon == std::string::npos) throw ConfigError(where + "missing type on '" + lhs + "'");
    const std::string key = trim(lhs.substr(0, colon));
    const std::string type = trim(lhs.substr(colon + 1));
    const Field& f = find_field(section, key);
    if (type != type_name(f.type)) {
      throw ConfigError(where + section + "." + key + " has type " + type_name(f.type) + ", not " + type);
    }
    if (key == "preset" && section == "run" && !value.empty()) {
      // A preset line resets everything to the preset before later keys
      // override individual values.
      const RunConfig keep = cfg;
      cfg = make_preset(value, keep.engine.env);
      cfg.label = keep.label;
      cfg.demo_path = keep.demo_path;
      cfg.seeds = keep.seeds;
      cfg.out_dir = keep.out_dir;
      cfg.demo_episodes = keep.demo_episodes;
      continue;
    }
    try {
      f.set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const Error& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string render_run_config(const RunConfig& cfg) { return render_fields(cfg, false); }

void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("config key must be section.key: " + dotted_key);
  find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(cfg, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.dotted());
  return out;
}

std::string config_digest(const RunConfig& cfg) {
  const std::string body = render_fields(cfg, true);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : body) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- presets -----------------------------------------------------------------

std::vector<std::string> preset_names() { return {"saifo", "dacfo", "gaifo_ppo", "gail_ppo"}; }

RunConfig make_preset(const std::string& name, const std::string& env, PresetScale scale) {
  make_env(env);
  RunConfig c;
  c.preset = name;
  c.label = name;
  c.engine.env = env;
  auto& d = c.engine.disc;
  auto& b = c.engine.backbone;
  // pendulum takes the HalfCheetah table, pointgoal the Hopper table.
  const bool second_table = env == "pointgoal";
  if (name == "saifo") {
    b.algorithm = Algorithm::kSac;
    c.engine.segment = SegmentSpec::state_pair();
    d.learning_rate = second_table ? 1e-4 : 6e-5;
    d.entropy_coeff = 0.0;
    d.grad_penalty_coeff = second_table ? 0.002 : 0.0006;
    d.update_every = second_table ? 10 : 100;
    d.warmup_steps = second_table ? 1000 : 500;
    b.batch_size = 400;
    b.alpha = second_table ? 0.15 : 0.02;
    b.warmup_q_steps = 5000;
    b.policy_updates = 674;
    b.cycle_length = 100;
  } else if (name == "dacfo") {
    b.algorithm = Algorithm::kTd3;
    c.engine.segment = SegmentSpec::state_pair();
    b.warmup_q_steps = 5000;
    d.warmup_steps = second_table ? 100 : 200;
    d.update_every = second_table ? 300 : 15;
    b.policy_updates = second_table ? 700 : 7000;
    b.cycle_length = second_table ? 100 : 1000;
    if (second_table) b.batch_size = 50;
  } else if (name == "gaifo_ppo" || name == "gail_ppo") {
    b.algorithm = Algorithm::kPpo;
    c.engine.segment = name == "gail_ppo" ? SegmentSpec::state_action() : SegmentSpec::state_pair();
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  if (scale == PresetScale::kDesk) apply_desk_scale(c);
  return c;
}

void apply_desk_scale(RunConfig& c) {
  auto& e = c.engine;
  auto& d = e.disc;
  auto& b = e.backbone;
  d.hidden = 32;
  d.batch_size = 256;
  b.hidden = 32;
  b.replay_capacity = 100'000;
  e.eval_every = 1000;
  e.eval_episodes = 10;
  if (b.algorithm == Algorithm::kPpo) {
    b.rollout_length = 1000;
    b.batch_size = 100;
    e.total_steps = 20'000;
    d.warmup_steps = 100;
    d.update_every = 1000;
  } else {
    b.batch_size = 64;
    // Early TD3 updates on pointgoal saturate the policy without a longer
    // random phase.
    b.start_steps = e.env == "pointgoal" ? 5000 : 1000;
    b.warmup_q_steps = 500;
    b.policy_updates = 1;
    b.cycle_length = 1;
    d.warmup_steps = 200;
    d.update_every = 100;
    d.learning_rate = 1e-4;
    e.total_steps = 12'000;
  }
}

// ---- trials ------------------------------------------------------------------

std::string trial_file_name(const std::string& digest, std::uint64_t seed) {
  return digest + "_" + std::to_string(seed) + ".jsonl";
}

TrialMetrics run_trial(const RunConfig& cfg, std::uint64_t seed,
                       std::shared_ptr<const DemoDataset> demos) {
  TrialMetrics m;
  m.seed = seed;
  m.label = cfg.label.empty() ? cfg.preset : cfg.label;
  try {
    m.config_digest = config_digest(cfg);
    EngineConfig ec = cfg.engine;
    ec.seed = seed;
    if (demos) m.expert_return = demos->expert_mean_return;
    Engine engine(ec, std::move(demos));
    TrialMetrics got = engine.run();
    got.seed = seed;
    got.label = m.label;
    got.config_digest = m.config_digest;
    got.expert_return = m.expert_return;
    m = std::move(got);
  } catch (const std::exception& e) {
    m.failed = true;
    m.error = e.what();
  }
  if (!cfg.out_dir.empty() && !m.config_digest.empty()) {
    try {
      std::filesystem::create_directories(cfg.out_dir);
      const auto path = std::filesystem::path(cfg.out_dir) / trial_file_name(m.config_digest, seed);
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << metrics_to_jsonl(m);
      if (!out) throw Error("write failed: " + path.string());
    } catch (const std::exception& e) {
      m.failed = true;
      if (m.error.empty()) m.error = e.what();
    }
  }
  return m;
}

TrialMetrics load_metrics_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open metrics file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return metrics_from_jsonl(ss.str());
}

double score_config(const std::vector<TrialMetrics>& trials, std::vector<std::string>* warnings) {
  constexpr std::size_t kWindow = 10;
  double sum = 0.0;
  int used = 0;
  for (const auto& t : trials) {
    if (t.failed) {
      if (warnings) warnings->push_back("trial seed " + std::to_string(t.seed) + " failed; excluded");
      continue;
    }
    if (t.records.size() < kWindow) {
      if (warnings) {
        warnings->push_back("trial seed " + std::to_string(t.seed) + " has " +
                            std::to_string(t.records.size()) + " evaluation records (< 10); excluded");
      }
      continue;
    }
    double s = 0.0;
    for (std::size_t i = t.records.size() - kWindow; i < t.records.size(); ++i) s += t.records[i].mean;
    sum += s / kWindow;
    ++used;
  }
  if (used == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / used;
}

// ---- grid --------------------------------------------------------------------

std::size_t GridSpec::config_count() const {
  std::size_t n = 1;
  for (const auto& [name, values] : axes) n *= values.size();
  return n;
}

std::uint64_t GridSpec::trial_seed(int i) const {
  if (static_cast<std::size_t>(i) < base.seeds.size() &&
      base.seeds.size() >= static_cast<std::size_t>(trials_per_config)) {
    return base.seeds[static_cast<std::size_t>(i)];
  }
  return static_cast<std::uint64_t>(i);
}

int worker_count() {
  if (const char* w = std::getenv("RAIL_WORKERS")) {
    const int n = std::atoi(w);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

GridResult grid_search(const GridSpec& spec, int workers, TrialRunner runner) {
  if (spec.axes.empty()) throw ConfigError("grid: at least one axis is required");
  for (const auto& [name, values] : spec.axes) {
    if (values.empty()) throw ConfigError("grid: axis " + name + " has no values");
  }
  if (spec.trials_per_config < 1) throw ConfigError("grid: trials_per_config must be >= 1");
  if (workers <= 0) workers = worker_count();

  struct Cell {
    RunConfig cfg;
    std::vector<std::pair<std::string, std::string>> assignment;
    std::string digest;
  };
  std::vector<Cell> cells;
  const std::size_t n_cfg = spec.config_count();
  for (std::size_t k = 0; k < n_cfg; ++k) {
    Cell c{spec.base, {}, {}};
    std::size_t rem = k;
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      const auto& [name, values] = spec.axes[a];
      const auto& v = values[rem % values.size()];
      rem /= values.size();
      set_config_value(c.cfg, name, v);
      c.assignment.insert(c.assignment.begin(), {name, v});
    }
    c.cfg.engine.validate();
    c.digest = config_digest(c.cfg);
    cells.push_back(std::move(c));
  }

  if (!runner) {
    std::shared_ptr<const DemoDataset> demos;
    if (!spec.base.demo_path.empty()) {
      demos = std::make_shared<const DemoDataset>(
          load_demos(spec.base.demo_path, make_env(spec.base.engine.env)->spec()));
    }
    runner = [demos](const RunConfig& cfg, std::uint64_t seed) { return run_trial(cfg, seed, demos); };
    if (!spec.base.out_dir.empty()) {
      std::filesystem::create_directories(spec.base.out_dir);
      for (const auto& c : cells) {
        std::ofstream(std::filesystem::path(spec.base.out_dir) / (c.digest + ".cfg"))
            << render_run_config(c.cfg);
      }
    }
  }

  const std::size_t per = static_cast<std::size_t>(spec.trials_per_config);
  const std::size_t total = n_cfg * per;
  std::vector<TrialMetrics> results(total);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= total) return;
      const auto& cell = cells[j / per];
      const auto seed = spec.trial_seed(static_cast<int>(j % per));
      try {
        results[j] = runner(cell.cfg, seed);
      } catch (const std::exception& e) {
        results[j].seed = seed;
        results[j].failed = true;
        results[j].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n_threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), total));
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  GridResult out;
  out.trials_run = total;
  for (std::size_t k = 0; k < n_cfg; ++k) {
    std::vector<TrialMetrics> trials(results.begin() + static_cast<std::ptrdiff_t>(k * per),
                                     results.begin() + static_cast<std::ptrdiff_t>((k + 1) * per));
    RankedConfig r;
    r.digest = cells[k].digest;
    r.assignment = cells[k].assignment;
    r.trials = static_cast<int>(per);
    std::vector<std::string> warn;
    r.score = score_config(trials, &warn);
    for (const auto& t : trials) {
      if (t.failed) {
        ++r.failed;
      } else if (t.records.size() < 10) {
        ++r.excluded;
      }
    }
    r.flagged = r.failed > 0 || r.excluded > 0;
    for (auto& w : warn) out.warnings.push_back(r.digest + ": " + w);
    out.ranking.push_back(std::move(r));
  }
  std::sort(out.ranking.begin(), out.ranking.end(), [](const RankedConfig& a, const RankedConfig& b) {
    const bool an = std::isnan(a.score), bn = std::isnan(b.score);
    if (an != bn) return bn;
    if (!an && a.score != b.score) return a.score > b.score;
    return a.digest < b.digest;
  });

  std::ostringstream t;
  t << "rank\tdigest\tscore\ttrials\tfailed\texcluded\tflagged";
  for (const auto& [name, values] : spec.axes) t << '\t' << name;
  t << '\n';
  for (std::size_t i = 0; i < out.ranking.size(); ++i) {
    const auto& r = out.ranking[i];
    t << (i + 1) << '\t' << r.digest << '\t' << (std::isnan(r.score) ? "nan" : fmt_double(r.score))
      << '\t' << r.trials << '\t' << r.failed << '\t' << r.excluded << '\t'
      << (r.flagged ? "yes" : "no");
    for (const auto& kv : r.assignment) t << '\t' << kv.second;
    t << '\n';
  }
  out.table = t.str();
  if (!spec.base.out_dir.empty()) {
    std::filesystem::create_directories(spec.base.out_dir);
    std::ofstream(std::filesystem::path(spec.base.out_dir) / "ranking.tsv", std::ios::binary) << out.table;
  }
  return out;
}

// ---- plots -------------------------------------------------------------------

namespace {

double interpolate_at(const std::vector<EvalRecord>& recs, double x) {
  if (x <= recs.front().env_steps) return recs.front().mean;
  for (std::size_t i = 1; i < recs.size(); ++i) {
    const double x1 = recs[i].env_steps;
    if (x == x1) return recs[i].mean;
    if (x < x1) {
      const double x0 = recs[i - 1].env_steps;
      const double w = (x - x0) / (x1 - x0);
      return recs[i - 1].mean + w * (recs[i].mean - recs[i - 1].mean);
    }
  }
  return recs.back().mean;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<SeriesPoint> aggregate_series(const PlotSeries& series, std::vector<std::string>* warnings) {
  std::vector<const TrialMetrics*> trials;
  for (const auto& t : series.trials) {
    if (!t.records.empty()) trials.push_back(&t);
  }
  if (trials.empty()) throw ContractError("series '" + series.label + "' has no trial with records");

  std::vector<double> grid;
  for (const auto& r : trials.front()->records) grid.push_back(r.env_steps);
  bool mismatch = false;
  for (const auto* t : trials) {
    if (t->records.size() != grid.size()) {
      mismatch = true;
      break;
    }
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (t->records[i].env_steps != grid[i]) mismatch = true;
    }
  }
  if (mismatch) {
    // Coarsest grid: the one with the fewest points, cut to the range every
    // trial covers.
    const TrialMetrics* coarse = trials.front();
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (const auto* t : trials) {
      if (t->records.size() < coarse->records.size()) coarse = t;
      lo = std::max(lo, static_cast<double>(t->records.front().env_steps));
      hi = std::min(hi, static_cast<double>(t->records.back().env_steps));
    }
    grid.clear();
    for (const auto& r : coarse->records) {
      if (r.env_steps >= lo && r.env_steps <= hi) grid.push_back(r.env_steps);
    }
    if (warnings) {
      warnings->push_back("series '" + series.label + "': evaluation grids differ; resampled onto " +
                          std::to_string(grid.size()) + " common points");
    }
  }

  std::vector<SeriesPoint> out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    SeriesPoint p;
    p.env_steps = grid[i];
    p.min = std::numeric_limits<double>::infinity();
    p.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (const auto* t : trials) {
      const double v = mismatch ? interpolate_at(t->records, grid[i]) : t->records[i].mean;
      sum += v;
      p.min = std::min(p.min, v);
      p.max = std::max(p.max, v);
    }
    p.trials = static_cast<int>(trials.size());
    p.mean = sum / p.trials;
    out.push_back(p);
  }
  return out;
}

PlotResult emit_plot(const std::vector<PlotSeries>& series, const std::string& svg_path,
                     const std::string& table_path, std::optional<double> expert_return) {
  if (series.empty()) throw ContractError("emit_plot: no series");
  PlotResult res;
  std::vector<std::vector<SeriesPoint>> agg;
  for (const auto& s : series) agg.push_back(aggregate_series(s, &res.warnings));

  if (!expert_return) {
    double sum = 0.0;
    int n = 0;
    for (const auto& s : series) {
      for (const auto& t : s.trials) {
        if (t.expert_return != 0.0) {
          sum += t.expert_return;
          ++n;
        }
      }
    }
    if (n > 0) expert_return = sum / n;
  }

  std::ostringstream tab;
  tab << "series\tenv_steps\tmean\tmin\tmax\ttrials\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    for (const auto& p : agg[k]) {
      tab << series[k].label << '\t' << fmt_double(p.env_steps) << '\t' << fmt_double(p.mean) << '\t'
          << fmt_double(p.min) << '\t' << fmt_double(p.max) << '\t' << p.trials << '\n';
    }
  }
  if (expert_return) tab << "expert\t\t" << fmt_double(*expert_return) << "\t\t\t\n";
  res.table = tab.str();

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& a : agg) {
    for (const auto& p : a) {
      x0 = std::min(x0, p.env_steps);
      x1 = std::max(x1, p.env_steps);
      y0 = std::min(y0, p.min);
      y1 = std::max(y1, p.max);
    }
  }
  if (expert_return) {
    y0 = std::min(y0, *expert_return);
    y1 = std::max(y1, *expert_return);
  }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;

  constexpr double W = 720, H = 440, L = 70, R = 160, T = 20, B = 50;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return T + (y1 - y) / (y1 - y0) * (H - T - B); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream svg;
  svg.precision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << (W - L - R) << "\" height=\""
      << (H - T - B) << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << sx(xv) << "\" y=\"" << (H - B + 18) << "\" font-size=\"11\" text-anchor=\"middle\">"
        << xv << "</text>\n";
    svg << "<text x=\"" << (L - 6) << "\" y=\"" << sy(yv) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
        << yv << "</text>\n";
  }
  svg << "<text x=\"" << (L + (W - L - R) / 2) << "\" y=\"" << (H - 10)
      << "\" font-size=\"12\" text-anchor=\"middle\">number of interactions</text>\n";
  svg << "<text x=\"16\" y=\"" << (T + (H - T - B) / 2) << "\" font-size=\"12\" text-anchor=\"middle\" "
      << "transform=\"rotate(-90 16 " << (T + (H - T - B) / 2) << ")\">return</text>\n";
  for (std::size_t k = 0; k < agg.size(); ++k) {
    const char* color = kColors[k % 6];
    const auto& a = agg[k];
    svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (const auto& p : a) svg << sx(p.env_steps) << ',' << sy(p.max) << ' ';
    for (auto it = a.rbegin(); it != a.rend(); ++it) svg << sx(it->env_steps) << ',' << sy(it->min) << ' ';
    svg << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : a) svg << sx(p.env_steps) << ',' << sy(p.mean) << ' ';
    svg << "\"/>\n";
    svg << "<text x=\"" << (W - R + 10) << "\" y=\"" << (T + 16 + 18 * k) << "\" font-size=\"12\" fill=\""
        << color << "\">" << xml_escape(series[k].label) << "</text>\n";
  }
  if (expert_return) {
    svg << "<line x1=\"" << L << "\" x2=\"" << (W - R) << "\" y1=\"" << sy(*expert_return) << "\" y2=\""
        << sy(*expert_return) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    svg << "<text x=\"" << (W - R + 10) << "\" y=\"" << (T + 16 + 18 * agg.size())
        << "\" font-size=\"12\">expert</text>\n";
  }
  svg << "</svg>\n";
  res.svg = svg.str();

  if (!svg_path.empty()) {
    std::ofstream out(svg_path, std::ios::binary);
    if (!out) throw Error("cannot write " + svg_path);
    out << res.svg;
  }
  if (!table_path.empty()) {
    std::ofstream out(table_path, std::ios::binary);
    if (!out) throw Error("cannot write " + table_path);
    out << res.table;
  }
  return res;
}

}  // namespace rail
