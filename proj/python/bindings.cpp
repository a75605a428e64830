#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rail/backbones.hpp"
#include "rail/demos.hpp"
#include "rail/discriminator.hpp"
#include "rail/engine.hpp"
#include "rail/envs.hpp"
#include "rail/errors.hpp"
#include "rail/harness.hpp"
#include "rail/nn.hpp"
#include "rail/representation.hpp"

namespace py = pybind11;
using namespace rail;

PYBIND11_MODULE(_rail, m) {
  m.doc() = "RAIL adversarial imitation learning core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());
  py::register_exception<ActionsUnavailable>(m, "ActionsUnavailable", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // nn
  py::enum_<OutputActivation>(m, "OutputActivation")
      .value("identity", OutputActivation::kIdentity)
      .value("tanh", OutputActivation::kTanh);
  py::class_<Mlp>(m, "Mlp")
      .def_readonly("layer_sizes", &Mlp::layer_sizes)
      .def_readwrite("weights", &Mlp::weights)
      .def_readwrite("biases", &Mlp::biases)
      .def("param_count", &Mlp::param_count)
      .def("touch", &Mlp::touch);
  m.def("make_mlp",
        [](std::vector<int> sizes, OutputActivation out, std::uint64_t seed) {
          Rng rng(seed);
          return make_mlp(sizes, out, rng);
        },
        py::arg("sizes"), py::arg("output") = OutputActivation::kIdentity, py::arg("seed") = 0);
  m.def("mlp_predict", &mlp_predict);
  m.def("mlp_input_grad", &mlp_input_grad);
  m.def("mlp_backward_params",
        [](const Mlp& net, const Batch& x, const Batch& upstream) {
          auto f = mlp_forward(net, x);
          auto g = mlp_backward(net, f.cache, upstream);
          return py::make_tuple(g.param_grads.weights, g.param_grads.biases, g.input_grads);
        });

  // envs
  py::class_<EnvSpec>(m, "EnvSpec")
      .def_readonly("name", &EnvSpec::name)
      .def_readonly("obs_dim", &EnvSpec::obs_dim)
      .def_readonly("act_dim", &EnvSpec::act_dim)
      .def_readonly("action_low", &EnvSpec::action_low)
      .def_readonly("action_high", &EnvSpec::action_high)
      .def_readonly("max_episode_steps", &EnvSpec::max_episode_steps);
  py::class_<StepResult>(m, "StepResult")
      .def_readonly("next_obs", &StepResult::next_obs)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("terminated", &StepResult::terminated)
      .def_readonly("truncated", &StepResult::truncated);
  py::class_<Env, std::unique_ptr<Env>>(m, "Env")
      .def_property_readonly("spec", &Env::spec)
      .def("reset", &Env::reset)
      .def("step", &Env::step)
      .def("observation", &Env::observation);
  m.def("make_env", &make_env);
  m.def("env_names", &env_names);

  // representation
  py::class_<SegmentSpec>(m, "SegmentSpec")
      .def_static("parse", &parse_segment_spec)
      .def("horizon", &SegmentSpec::horizon)
      .def("uses_actions", &SegmentSpec::uses_actions)
      .def("__str__", [](const SegmentSpec& s) { return to_string(s); })
      .def("__eq__", &SegmentSpec::operator==);
  m.def("segment_dim", &segment_dim);
  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<std::vector<Vec>>())
      .def(py::init<std::vector<Vec>, std::vector<Vec>>())
      .def("length", &Trajectory::length)
      .def("has_actions", &Trajectory::has_actions)
      .def_property_readonly("observations", &Trajectory::observations)
      .def_property_readonly("actions", &Trajectory::actions);
  m.def("segment_matrix", &segment_matrix);

  // discriminator
  py::class_<DiscConfig>(m, "DiscConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &DiscConfig::learning_rate)
      .def_readwrite("entropy_coeff", &DiscConfig::entropy_coeff)
      .def_readwrite("grad_penalty_coeff", &DiscConfig::grad_penalty_coeff)
      .def_readwrite("batch_size", &DiscConfig::batch_size)
      .def_readwrite("hidden", &DiscConfig::hidden);
  py::class_<DiscLossReport>(m, "DiscLossReport")
      .def_readonly("bce_expert", &DiscLossReport::bce_expert)
      .def_readonly("bce_learner", &DiscLossReport::bce_learner)
      .def_readonly("grad_penalty", &DiscLossReport::grad_penalty)
      .def_readonly("total", &DiscLossReport::total)
      .def_readonly("mean_d_expert", &DiscLossReport::mean_d_expert)
      .def_readonly("mean_d_learner", &DiscLossReport::mean_d_learner);
  py::class_<DiscState>(m, "DiscState")
      .def_readwrite("params", &DiscState::params)
      .def_readonly("updates_done", &DiscState::updates_done);
  m.def("make_disc_state",
        [](int seg_dim, const DiscConfig& cfg, std::uint64_t seed) {
          Rng rng(seed);
          return make_disc_state(seg_dim, cfg, rng);
        },
        py::arg("segment_dim"), py::arg("config"), py::arg("seed") = 0);
  m.def("disc_update",
        [](DiscState& s, const Batch& expert, const Batch& learner, const DiscConfig& cfg,
           std::uint64_t seed) {
          Rng rng(seed);
          return disc_update(s, expert, learner, cfg, rng);
        });
  m.def("gradient_penalty", [](const Mlp& p, const Batch& x) { return gradient_penalty(p, x).value; });
  m.def("imitation_rewards", [](const DiscState& s, const Batch& segs, const DiscConfig& cfg) {
    return imitation_rewards(s.params, segs, cfg);
  });

  // backbones
  m.def("gae_advantages", &gae_advantages);
  m.def("squashed_gaussian_logprob", &squashed_gaussian_logprob);

  // demos, engine, harness
  py::class_<DemoDataset, std::shared_ptr<DemoDataset>>(m, "DemoDataset")
      .def_readonly("env", &DemoDataset::env)
      .def_readonly("obs_dim", &DemoDataset::obs_dim)
      .def_readonly("act_dim", &DemoDataset::act_dim)
      .def_readonly("actions_included", &DemoDataset::actions_included)
      .def_readonly("expert_mean_return", &DemoDataset::expert_mean_return)
      .def_readonly("episode_returns", &DemoDataset::episode_returns)
      .def_readonly("episodes", &DemoDataset::episodes)
      .def("transitions", &DemoDataset::transitions)
      .def("observations_only", &DemoDataset::observations_only)
      .def("__eq__", &DemoDataset::operator==);
  m.def("load_demos", [](const std::string& p) { return std::make_shared<DemoDataset>(load_demos(p)); });
  m.def("save_demos", [](const std::string& p, const DemoDataset& d) { save_demos(p, d); });

  py::class_<EvalRecord>(m, "EvalRecord")
      .def(py::init<>())
      .def_readwrite("env_steps", &EvalRecord::env_steps)
      .def_readwrite("mean", &EvalRecord::mean)
      .def_readwrite("min", &EvalRecord::min)
      .def_readwrite("max", &EvalRecord::max);
  py::class_<TrialMetrics>(m, "TrialMetrics")
      .def(py::init<>())
      .def_readwrite("records", &TrialMetrics::records)
      .def_readwrite("seed", &TrialMetrics::seed)
      .def_readwrite("label", &TrialMetrics::label)
      .def_readwrite("failed", &TrialMetrics::failed)
      .def_readonly("error", &TrialMetrics::error)
      .def_readonly("config_digest", &TrialMetrics::config_digest)
      .def_readonly("disc_updates", &TrialMetrics::disc_updates)
      .def_readonly("q_updates", &TrialMetrics::q_updates)
      .def_readonly("policy_updates", &TrialMetrics::policy_updates);
  m.def("metrics_to_jsonl", &metrics_to_jsonl);
  m.def("metrics_from_jsonl", &metrics_from_jsonl);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("demo_path", &RunConfig::demo_path)
      .def_readwrite("seeds", &RunConfig::seeds)
      .def_readwrite("out_dir", &RunConfig::out_dir)
      .def_readwrite("label", &RunConfig::label)
      .def("set", [](RunConfig& c, const std::string& k, const std::string& v) { set_config_value(c, k, v); })
      .def("render", [](const RunConfig& c) { return render_run_config(c); })
      .def("digest", [](const RunConfig& c) { return config_digest(c); });
  m.def("parse_run_config", &parse_run_config);
  m.def("preset_names", &preset_names);
  m.def("make_preset",
        [](const std::string& name, const std::string& env, bool desk) {
          return make_preset(name, env, desk ? PresetScale::kDesk : PresetScale::kFull);
        },
        py::arg("name"), py::arg("env"), py::arg("desk") = false);
  m.def("run_trial",
        [](const RunConfig& cfg, std::uint64_t seed, std::shared_ptr<DemoDataset> demos) {
          py::gil_scoped_release release;
          return run_trial(cfg, seed, std::move(demos));
        },
        py::arg("config"), py::arg("seed"), py::arg("demos") = nullptr);
  m.def("score_config", [](const std::vector<TrialMetrics>& t) { return score_config(t); });
  m.def("record_expert_demos",
        [](const std::string& env_name, int budget, int episodes, bool include_actions,
           std::uint64_t seed) {
          py::gil_scoped_release release;
          auto cfg = make_preset("saifo", env_name, PresetScale::kDesk);
          ExpertOptions o;
          o.step_budget = budget;
          o.eval_every = std::min(1000, budget);
          o.seed = seed;
          auto ex = train_expert(env_name, cfg.engine.backbone, o);
          auto env = make_env(env_name);
          return std::make_shared<DemoDataset>(
              record_demos(ex.policy, *env, episodes, include_actions, seed));
        },
        py::arg("env"), py::arg("budget") = 8000, py::arg("episodes") = 10,
        py::arg("include_actions") = true, py::arg("seed") = 0);
}
