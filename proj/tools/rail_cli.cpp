// rail: expert | run | grid | plot
#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "rail/demos.hpp"
#include "rail/errors.hpp"
#include "rail/harness.hpp"

namespace fs = std::filesystem;
using namespace rail;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string env = "pendulum";
  std::string out;
  std::string demos;
  std::vector<std::string> sets;
  bool desk = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run config file");
  app->add_option("--preset", c.preset, "saifo, dacfo, gaifo_ppo or gail_ppo")
      ->check(CLI::IsMember(preset_names()));
  app->add_option("--env", c.env, "environment")->check(CLI::IsMember(env_names()));
  app->add_option("--demos", c.demos, "demo file");
  app->add_option("--set", c.sets, "override section.key=value (repeatable)");
  app->add_flag("--desk", c.desk, "shrink the preset to laptop scale");
}

RunConfig resolve(const Common& c, CLI::App* app) {
  RunConfig cfg;
  if (!c.config.empty()) {
    cfg = load_run_config(c.config);
    if (app->count("--env") && cfg.engine.env != c.env) cfg.engine.env = c.env;
  } else {
    cfg = make_preset(c.preset.empty() ? "saifo" : c.preset, c.env,
                      c.desk ? PresetScale::kDesk : PresetScale::kFull);
  }
  if (!c.config.empty() && !c.preset.empty()) {
    throw ConfigError("--config and --preset are mutually exclusive");
  }
  if (!c.demos.empty()) cfg.demo_path = c.demos;
  if (!c.out.empty()) cfg.out_dir = c.out;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got " + s);
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> seed_list(CLI::App* app, std::uint64_t seed, const std::string& seeds,
                                     const RunConfig& cfg) {
  if (app->count("--seeds")) {
    std::vector<std::uint64_t> out;
    // "0,1,2" or "0-9"
    const auto dash = seeds.find('-');
    if (dash != std::string::npos && seeds.find(',') == std::string::npos) {
      const auto a = std::stoull(seeds.substr(0, dash)), b = std::stoull(seeds.substr(dash + 1));
      for (auto s = a; s <= b; ++s) out.push_back(s);
    } else {
      std::stringstream ss(seeds);
      std::string tok;
      while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
    }
    if (out.empty()) throw ConfigError("--seeds is empty");
    return out;
  }
  if (app->count("--seed")) return {seed};
  return cfg.seeds;
}

int cmd_expert(const Common& c, CLI::App* app, std::uint64_t seed, double target, int budget,
               bool with_actions, int episodes) {
  RunConfig cfg = resolve(c, app);
  cfg.engine.backbone.algorithm = Algorithm::kSac;
  ExpertOptions o;
  o.seed = seed;
  o.target_return = target;
  o.step_budget = budget;
  o.eval_every = std::min(cfg.engine.eval_every, budget);
  o.eval_episodes = cfg.engine.eval_episodes;
  auto ex = train_expert(cfg.engine.env, cfg.engine.backbone, o);
  if (!ex.warning.empty()) std::cerr << "warning: " << ex.warning << '\n';
  auto env = make_env(cfg.engine.env);
  const auto demos = record_demos(ex.policy, *env, episodes, with_actions, mix_seed(seed, 0x64656d6fULL));
  const fs::path out = c.out.empty() ? fs::path("expert") : fs::path(c.out);
  fs::create_directories(out);
  const auto demo_path = out / (cfg.engine.env + ".demo");
  const auto policy_path = out / (cfg.engine.env + ".policy");
  save_demos(demo_path.string(), demos);
  save_policy(policy_path.string(), ex.policy);
  std::cout << "expert eval return " << ex.eval_return << " after " << ex.env_steps << " steps\n"
            << "demo mean return " << demos.expert_mean_return << " over " << episodes << " episodes\n"
            << "wrote " << demo_path.string() << " and " << policy_path.string() << '\n';
  return 0;
}

int cmd_run(const Common& c, CLI::App* app, std::uint64_t seed, const std::string& seeds) {
  RunConfig cfg = resolve(c, app);
  const auto list = seed_list(app, seed, seeds, cfg);
  std::shared_ptr<const DemoDataset> demos;
  if (!cfg.engine.use_true_reward) {
    if (cfg.demo_path.empty()) throw ConfigError("an imitation run needs --demos or run.demos");
    demos = std::make_shared<const DemoDataset>(
        load_demos(cfg.demo_path, make_env(cfg.engine.env)->spec()));
  }
  fs::create_directories(cfg.out_dir);
  const auto digest = config_digest(cfg);
  {
    std::ofstream(fs::path(cfg.out_dir) / (digest + ".cfg")) << render_run_config(cfg);
  }
  std::vector<TrialMetrics> results(list.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (;;) {
      const auto i = next.fetch_add(1);
      if (i >= list.size()) return;
      results[i] = run_trial(cfg, list[i], demos);
    }
  };
  const int n = std::min<int>(worker_count(), static_cast<int>(list.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  int failed = 0;
  for (const auto& m : results) {
    std::cout << "seed " << m.seed << ": ";
    if (m.failed) {
      ++failed;
      std::cout << "FAILED " << m.error << '\n';
    } else {
      std::cout << "final eval " << (m.records.empty() ? 0.0 : m.records.back().mean) << " ("
                << m.records.size() << " evaluations) -> "
                << (fs::path(cfg.out_dir) / trial_file_name(m.config_digest, m.seed)).string() << '\n';
    }
  }
  return failed == 0 ? 0 : 1;
}

int cmd_grid(const Common& c, CLI::App* app, const std::vector<std::string>& axes, int trials) {
  GridSpec spec;
  spec.base = resolve(c, app);
  spec.trials_per_config = trials;
  for (const auto& a : axes) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("--axis expects section.key=v1,v2,...");
    std::vector<std::string> values;
    std::stringstream ss(a.substr(eq + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) values.push_back(tok);
    spec.axes.emplace_back(a.substr(0, eq), values);
  }
  const auto res = grid_search(spec);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << res.table;
  int failed = 0;
  for (const auto& r : res.ranking) failed += r.failed;
  std::cout << res.trials_run << " trials, " << failed << " failed\n";
  return failed == 0 ? 0 : 1;
}

int cmd_plot(const std::vector<std::string>& files, const std::string& out, double expert, bool has_expert) {
  std::map<std::string, PlotSeries> by_label;
  std::vector<std::string> order;
  for (const auto& f : files) {
    auto m = load_metrics_file(f);
    const std::string label = m.label.empty() ? m.config_digest : m.label;
    if (!by_label.count(label)) {
      order.push_back(label);
      by_label[label].label = label;
    }
    by_label[label].trials.push_back(std::move(m));
  }
  std::vector<PlotSeries> series;
  for (const auto& l : order) series.push_back(by_label[l]);
  const fs::path svg = out.empty() ? fs::path("plot.svg") : fs::path(out);
  fs::path table = svg;
  table.replace_extension(".tsv");
  const auto res = emit_plot(series, svg.string(), table.string(),
                             has_expert ? std::optional<double>(expert) : std::nullopt);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << "wrote " << svg.string() << " and " << table.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RAIL imitation learning experiments"};
  app.require_subcommand(1);

  Common common;
  std::uint64_t seed = 0;
  std::string seeds;

  auto* expert = app.add_subcommand("expert", "train an expert on the true reward and record demos");
  add_common(expert, common);
  expert->add_option("--out", common.out, "output directory");
  expert->add_option("--seed", seed, "trial seed");
  double target = -200.0;
  int budget = 150'000, episodes = 10;
  bool observation_only = false;
  expert->add_option("--target", target, "target evaluation return");
  expert->add_option("--budget", budget, "environment step budget");
  expert->add_option("--episodes", episodes, "demo episodes");
  expert->add_flag("--observation-only", observation_only, "record states only");

  auto* run = app.add_subcommand("run", "run trials of one config");
  add_common(run, common);
  run->add_option("--out", common.out, "output directory");
  run->add_option("--seed", seed, "single seed");
  run->add_option("--seeds", seeds, "seed list: 0,1,2 or 0-9");

  auto* grid = app.add_subcommand("grid", "grid search over config axes");
  add_common(grid, common);
  grid->add_option("--out", common.out, "output directory");
  std::vector<std::string> axes;
  int trials = 10;
  grid->add_option("--axis", axes, "section.key=v1,v2,... (repeatable)")->required();
  grid->add_option("--trials", trials, "trials per config");

  auto* plot = app.add_subcommand("plot", "aggregate metric files into an SVG plot");
  std::vector<std::string> files;
  std::string plot_out;
  double expert_line = 0.0;
  plot->add_option("files", files, "metric files")->required();
  plot->add_option("--out", plot_out, "SVG path; the data table goes next to it");
  plot->add_option("--expert", expert_line, "expert return line");

  CLI11_PARSE(app, argc, argv);
  try {
    if (expert->parsed()) {
      return cmd_expert(common, expert, seed, target, budget, !observation_only, episodes);
    }
    if (run->parsed()) return cmd_run(common, run, seed, seeds);
    if (grid->parsed()) return cmd_grid(common, grid, axes, trials);
    if (plot->parsed()) return cmd_plot(files, plot_out, expert_line, plot->count("--expert") > 0);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
