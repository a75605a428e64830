#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <random>
#include <sstream>

#include "rail/errors.hpp"
#include "rail/harness.hpp"

using namespace rail;
namespace fs = std::filesystem;

namespace {

TrialMetrics trial_with(const std::vector<double>& means, std::uint64_t seed = 0, int step = 1000) {
  TrialMetrics t;
  t.seed = seed;
  for (std::size_t i = 0; i < means.size(); ++i) {
    EvalRecord r;
    r.env_steps = step * static_cast<int>(i + 1);
    r.mean = r.min = r.max = means[i];
    t.records.push_back(r);
  }
  return t;
}

std::vector<double> constant(double v, int n) { return std::vector<double>(static_cast<std::size_t>(n), v); }

// Hand-rolled score: average the per-trial window means of eligible trials.
double oracle_score(const std::vector<TrialMetrics>& trials) {
  std::vector<double> per;
  for (const auto& t : trials) {
    if (t.failed || t.records.size() < 10) continue;
    double s = 0.0;
    for (std::size_t k = t.records.size() - 10; k < t.records.size(); ++k) s += t.records[k].mean;
    per.push_back(s / 10);
  }
  if (per.empty()) return std::nan("");
  double s = 0.0;
  for (double v : per) s += v;
  return s / static_cast<double>(per.size());
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rail_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("score examples") {
  std::vector<double> one_to_ten;
  for (int i = 1; i <= 10; ++i) one_to_ten.push_back(i);
  CHECK(score_config({trial_with(one_to_ten)}) == 5.5);
  CHECK(score_config({trial_with(constant(4, 10)), trial_with(constant(6, 10))}) == 5.0);
  std::vector<double> thirteen;
  for (int i = 1; i <= 13; ++i) thirteen.push_back(i <= 3 ? 1000.0 : i);
  CHECK(score_config({trial_with(thirteen)}) == doctest::Approx(8.5));

  std::vector<std::string> warn;
  TrialMetrics failed = trial_with(constant(100, 10), 3);
  failed.failed = true;
  CHECK(score_config({trial_with(constant(2, 10)), failed, trial_with(constant(9, 4), 5)}, &warn) == 2.0);
  CHECK(warn.size() == 2);
  CHECK(std::isnan(score_config({failed})));
}

TEST_CASE("score matches the oracle on random metric sets") {
  std::mt19937_64 r(123);
  std::uniform_int_distribution<int> n_trials(1, 10), n_records(5, 30), flip(0, 9);
  std::normal_distribution<double> v(-300.0, 200.0);
  for (int c = 0; c < 100; ++c) {
    std::vector<TrialMetrics> ts;
    const int n = n_trials(r);
    for (int i = 0; i < n; ++i) {
      std::vector<double> m(static_cast<std::size_t>(n_records(r)));
      for (auto& x : m) x = v(r);
      ts.push_back(trial_with(m, static_cast<std::uint64_t>(i)));
      ts.back().failed = flip(r) == 0;
    }
    const double got = score_config(ts), want = oracle_score(ts);
    if (std::isnan(want)) {
      CHECK(std::isnan(got));
    } else {
      CHECK(got == want);
    }
  }
}

TEST_CASE("grid counts, ranking and determinism") {
  GridSpec g;
  g.base = make_preset("saifo", "pendulum", PresetScale::kDesk);
  g.base.out_dir = "";
  g.axes = {{"discriminator.learning_rate", {"0.0001", "0.001"}}, {"backbone.alpha", {"0.02", "0.2"}}};
  CHECK(g.config_count() == 4);
  CHECK(g.trial_count() == 40);

  // Synthetic runner: score grows with both axes; seeds are per config.
  auto runner = [](const RunConfig& c, std::uint64_t seed) {
    const double v = 1000 * c.engine.disc.learning_rate + c.engine.backbone.alpha + 1e-6 * static_cast<double>(seed);
    TrialMetrics t = trial_with(constant(v, 12), seed);
    t.config_digest = config_digest(c);
    return t;
  };
  std::atomic<int> calls{0};
  std::mutex mu;
  std::map<std::string, std::set<std::uint64_t>> seeds_by_cfg;
  auto counted = [&](const RunConfig& c, std::uint64_t seed) {
    ++calls;
    std::lock_guard<std::mutex> lock(mu);
    CHECK(seeds_by_cfg[config_digest(c)].insert(seed).second);
    return runner(c, seed);
  };
  const auto res = grid_search(g, 4, counted);
  CHECK(calls.load() == 40);
  CHECK(res.trials_run == 40);
  CHECK(seeds_by_cfg.size() == 4);
  for (const auto& [d, s] : seeds_by_cfg) CHECK(s.size() == 10);
  REQUIRE(res.ranking.size() == 4);
  CHECK(res.ranking[0].assignment[0].second == "0.001");
  CHECK(res.ranking[0].assignment[1].second == "0.2");
  CHECK(res.ranking[3].assignment[0].second == "0.0001");
  CHECK(res.ranking[3].assignment[1].second == "0.02");
  for (std::size_t i = 1; i < 4; ++i) CHECK(res.ranking[i - 1].score > res.ranking[i].score);

  const auto again = grid_search(g, 1, runner);
  CHECK(again.table == res.table);

  // Ties fall back to the digest.
  auto flat = [](const RunConfig&, std::uint64_t seed) { return trial_with(constant(1.0, 10), seed); };
  const auto tied = grid_search(g, 2, flat);
  for (std::size_t i = 1; i < 4; ++i) CHECK(tied.ranking[i - 1].digest < tied.ranking[i].digest);
}

TEST_CASE("grid with a monotone axis and flagged configs") {
  GridSpec g;
  g.base = make_preset("dacfo", "pendulum", PresetScale::kDesk);
  g.base.out_dir = "";
  g.trials_per_config = 3;
  g.axes = {{"backbone.tau", {"0.001", "0.004", "0.002", "0.003"}}};
  auto runner = [](const RunConfig& c, std::uint64_t seed) -> TrialMetrics {
    if (c.engine.backbone.tau == 0.003 && seed == 1) throw Error("boom");
    return trial_with(constant(c.engine.backbone.tau, 10), seed);
  };
  const auto res = grid_search(g, 3, runner);
  CHECK(res.trials_run == 12);
  std::vector<std::string> order;
  for (const auto& r : res.ranking) order.push_back(r.assignment[0].second);
  CHECK(order == std::vector<std::string>{"0.004", "0.003", "0.002", "0.001"});
  CHECK(res.ranking[1].flagged);
  CHECK(res.ranking[1].failed == 1);
  CHECK_FALSE(res.ranking[0].flagged);
  CHECK_THROWS_AS(grid_search(GridSpec{g.base, {}, 3}, 1, runner), ConfigError);
}

TEST_CASE("grid seeds come from the base seed list") {
  GridSpec g;
  g.trials_per_config = 3;
  g.base.seeds = {7, 8, 9};
  CHECK(g.trial_seed(0) == 7);
  CHECK(g.trial_seed(2) == 9);
  g.base.seeds = {7};
  CHECK(g.trial_seed(2) == 2);
}

TEST_CASE("plot: single trial collapses the band") {
  PlotSeries s{"a", {trial_with({1.0, 2.5, -3.0})}};
  const auto pts = aggregate_series(s);
  REQUIRE(pts.size() == 3);
  for (const auto& p : pts) {
    CHECK(p.min == p.mean);
    CHECK(p.max == p.mean);
    CHECK(p.trials == 1);
  }
}

TEST_CASE("plot: constant trials give mean 2 and band [1, 3]") {
  PlotSeries s{"b", {trial_with(constant(1, 5)), trial_with(constant(3, 5))}};
  for (const auto& p : aggregate_series(s)) {
    CHECK(p.mean == 2.0);
    CHECK(p.min == 1.0);
    CHECK(p.max == 3.0);
  }
}

TEST_CASE("plot table reproduces the data exactly") {
  std::mt19937_64 r(5);
  std::normal_distribution<double> v(-200, 50);
  std::vector<double> a(8), b(8);
  for (auto& x : a) x = v(r);
  for (auto& x : b) x = v(r);
  const auto dir = scratch("plot");
  PlotSeries s{"saifo", {trial_with(a), trial_with(b)}};
  s.trials[0].expert_return = -150.5;
  s.trials[1].expert_return = -149.5;
  const auto res = emit_plot({s}, (dir / "p.svg").string(), (dir / "p.tsv").string());
  CHECK(fs::exists(dir / "p.svg"));
  CHECK(res.svg.find("<svg") == 0);
  CHECK(res.svg.find("stroke=\"black\"") != std::string::npos);
  std::istringstream in(res.table);
  std::string line;
  std::getline(in, line);
  CHECK(line == "series\tenv_steps\tmean\tmin\tmax\ttrials");
  for (int i = 0; i < 8; ++i) {
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string label, x, mean, lo, hi, n;
    std::getline(row, label, '\t');
    std::getline(row, x, '\t');
    std::getline(row, mean, '\t');
    std::getline(row, lo, '\t');
    std::getline(row, hi, '\t');
    std::getline(row, n, '\t');
    CHECK(label == "saifo");
    CHECK(std::strtod(x.c_str(), nullptr) == 1000.0 * (i + 1));
    CHECK(std::strtod(mean.c_str(), nullptr) == (a[i] + b[i]) / 2);
    CHECK(std::strtod(lo.c_str(), nullptr) == std::min(a[i], b[i]));
    CHECK(std::strtod(hi.c_str(), nullptr) == std::max(a[i], b[i]));
    CHECK(n == "2");
  }
  REQUIRE(std::getline(in, line));
  CHECK(line.rfind("expert\t\t-150\t", 0) == 0);
  CHECK(res.warnings.empty());
}

TEST_CASE("plot resamples mismatched grids with a warning") {
  PlotSeries s{"c", {trial_with({0, 10, 20, 30}, 0, 1000), trial_with({0, 5}, 1, 2000)}};
  std::vector<std::string> warn;
  const auto pts = aggregate_series(s, &warn);
  CHECK(warn.size() == 1);
  REQUIRE(pts.size() == 2);
  CHECK(pts[0].env_steps == 2000);
  CHECK(pts[0].mean == doctest::Approx(5.0));
  CHECK(pts[1].env_steps == 4000);
  CHECK(pts[1].mean == doctest::Approx(17.5));
  CHECK_THROWS_AS(aggregate_series(PlotSeries{"empty", {}}), ContractError);
}

TEST_CASE("config render and parse round trip") {
  for (const auto& name : preset_names()) {
    for (const auto& env : env_names()) {
      for (auto scale : {PresetScale::kFull, PresetScale::kDesk}) {
        RunConfig c = make_preset(name, env, scale);
        c.seeds = {1, 2, 5};
        c.demo_path = "x.demo";
        const std::string text = render_run_config(c);
        const RunConfig back = parse_run_config(text);
        CHECK(render_run_config(back) == text);
        CHECK(config_digest(back) == config_digest(c));
      }
    }
  }
}

TEST_CASE("preset lines apply before overrides") {
  const RunConfig c = parse_run_config(
      "[run]\nenv:string = pointgoal\npreset:string = dacfo\nseeds:list = 3,4\n"
      "[backbone]\ntau:float = 0.01\n");
  CHECK(c.engine.env == "pointgoal");
  CHECK(c.engine.backbone.algorithm == Algorithm::kTd3);
  CHECK(c.engine.backbone.batch_size == 50);
  CHECK(c.engine.backbone.tau == 0.01);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_run_config("[backbone]\ngamma:int = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[backbone]\ngamma:float = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[backbone]\nnope:float = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("gamma:float = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[backbone\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[engine]\nrepresentation:string = pixels\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[run]\npreset:string = bc\n"), ConfigError);
  RunConfig c;
  CHECK_THROWS_AS(set_config_value(c, "backbone.batch_size", "-"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "batch_size", "3"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "engine.eval_seed", "-1"), ConfigError);
  CHECK_NOTHROW(set_config_value(c, "engine.eval_seed", "0x10"));
  CHECK(c.engine.eval_seed == 16);
}

TEST_CASE("digest ignores bookkeeping fields only") {
  RunConfig a = make_preset("saifo", "pendulum");
  RunConfig b = a;
  b.seeds = {9, 10};
  b.out_dir = "elsewhere";
  b.label = "other";
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a).size() == 16);
  b.engine.backbone.tau = 0.006;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("trials write their metrics files and isolate failures") {
  const auto dir = scratch("trials");
  RunConfig c = make_preset("saifo", "pendulum", PresetScale::kDesk);
  c.out_dir = dir.string();
  c.engine.use_true_reward = true;
  c.engine.total_steps = 400;
  c.engine.eval_every = 200;
  c.engine.eval_episodes = 1;
  c.engine.backbone.start_steps = 300;
  c.engine.backbone.warmup_q_steps = 5;
  const auto m1 = run_trial(c, 3, nullptr);
  CHECK_FALSE(m1.failed);
  const auto file = dir / trial_file_name(config_digest(c), 3);
  REQUIRE(fs::exists(file));
  const auto back = load_metrics_file(file.string());
  CHECK(metrics_to_jsonl(back) == metrics_to_jsonl(m1));
  const auto m2 = run_trial(c, 3, nullptr);
  CHECK(metrics_to_jsonl(m2) == metrics_to_jsonl(m1));

  RunConfig bad = c;
  bad.engine.use_true_reward = false;  // no demos
  const auto m3 = run_trial(bad, 4, nullptr);
  CHECK(m3.failed);
  CHECK_FALSE(m3.error.empty());
  CHECK(fs::exists(dir / trial_file_name(config_digest(bad), 4)));
}

TEST_CASE("worker count honours the environment") {
  setenv("RAIL_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("RAIL_WORKERS", "zero", 1);
  CHECK(worker_count() >= 1);
  unsetenv("RAIL_WORKERS");
}
