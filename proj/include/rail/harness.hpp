#ifndef RAIL_HARNESS_HPP_
#define RAIL_HARNESS_HPP_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rail/demos.hpp"
#include "rail/engine.hpp"

namespace rail {

struct RunConfig {
  std::string preset;  // informational once applied
  std::string label;
  EngineConfig engine;
  std::string demo_path;
  int demo_episodes = 10;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";

  void validate() const;
};

// Sectioned `key:type = value` text; see docs/formats.md.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string render_run_config(const RunConfig& cfg);

// Sets one field from its `section.key` name and textual value.
void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);
std::vector<std::string> config_keys();

// FNV-1a 64 over the rendered config minus seeds, output directory and
// label. Sixteen lowercase hex digits.
std::string config_digest(const RunConfig& cfg);

enum class PresetScale { kFull, kDesk };

std::vector<std::string> preset_names();
// saifo, dacfo, gaifo_ppo, gail_ppo. Environment-specific values come from
// the matching hyperparameter table; kDesk shrinks networks and budgets to
// laptop size.
RunConfig make_preset(const std::string& name, const std::string& env,
                      PresetScale scale = PresetScale::kFull);
void apply_desk_scale(RunConfig& cfg);

// Never throws for engine errors: they are recorded in the metrics and the
// trial is marked failed. Writes <out_dir>/<digest>_<seed>.jsonl unless
// out_dir is empty.
TrialMetrics run_trial(const RunConfig& cfg, std::uint64_t seed,
                       std::shared_ptr<const DemoDataset> demos);
std::string trial_file_name(const std::string& digest, std::uint64_t seed);

TrialMetrics load_metrics_file(const std::string& path);

// Mean over trials of the mean of each trial's last 10 evaluation means.
// Failed trials and trials with fewer than 10 records are excluded (with a
// warning). NaN when nothing survives.
double score_config(const std::vector<TrialMetrics>& trials,
                    std::vector<std::string>* warnings = nullptr);

struct GridSpec {
  RunConfig base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  int trials_per_config = 10;

  std::size_t config_count() const;
  std::size_t trial_count() const { return config_count() * static_cast<std::size_t>(trials_per_config); }
  // Seed of trial i in every config: base.seeds[i] when provided, else i.
  std::uint64_t trial_seed(int i) const;
};

struct RankedConfig {
  std::string digest;
  std::vector<std::pair<std::string, std::string>> assignment;
  double score = 0.0;
  int trials = 0;
  int failed = 0;
  int excluded = 0;
  bool flagged = false;
};

struct GridResult {
  std::vector<RankedConfig> ranking;
  std::size_t trials_run = 0;
  std::string table;  // tab-separated ranking table
  std::vector<std::string> warnings;
};

using TrialRunner = std::function<TrialMetrics(const RunConfig&, std::uint64_t seed)>;

// Worker count from RAIL_WORKERS, else the hardware thread count.
int worker_count();

// All config x seed trials, `workers` in parallel. Without a runner, trials
// run through run_trial with demos loaded once from base.demo_path.
GridResult grid_search(const GridSpec& spec, int workers = 0, TrialRunner runner = {});

struct PlotSeries {
  std::string label;
  std::vector<TrialMetrics> trials;
};

struct SeriesPoint {
  double env_steps = 0.0;
  double mean = 0.0, min = 0.0, max = 0.0;
  int trials = 0;
};

// Pointwise mean/min/max across trials. Trials with differing evaluation
// grids are interpolated onto the coarsest one (warning added).
std::vector<SeriesPoint> aggregate_series(const PlotSeries& series,
                                          std::vector<std::string>* warnings = nullptr);

struct PlotResult {
  std::string svg;
  std::string table;
  std::vector<std::string> warnings;
};

// Mean line plus min/max band per series and a horizontal expert line.
// Writes the SVG and its data table when paths are non-empty.
PlotResult emit_plot(const std::vector<PlotSeries>& series, const std::string& svg_path,
                     const std::string& table_path,
                     std::optional<double> expert_return = std::nullopt);

}  // namespace rail

#endif  // RAIL_HARNESS_HPP_
