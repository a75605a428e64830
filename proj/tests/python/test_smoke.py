import math
import os

import numpy as np
import pytest

import rail


def test_zero_network_and_gradients():
    net = rail.make_mlp([3, 4, 4, 2], seed=1)
    x = np.random.default_rng(0).normal(size=(3, 5))
    y = rail.mlp_predict(net, x)
    assert y.shape == (2, 5)
    wg, bg, ig = rail.mlp_backward_params(net, x, np.zeros((2, 5)))
    assert all(np.all(w == 0) for w in wg)
    assert ig.shape == (3, 5)


def test_shape_error_is_mapped():
    net = rail.make_mlp([3, 4, 1])
    with pytest.raises(rail.ShapeError):
        rail.mlp_predict(net, np.zeros((2, 1)))


def test_environment_roundtrip():
    env = rail.make_env("pendulum")
    assert env.spec.obs_dim == 3
    o1 = env.reset(7)
    r = env.step(np.zeros(1))
    assert r.reward <= 0.0
    assert not r.terminated
    assert np.allclose(rail.make_env("pendulum").reset(7), o1)
    assert rail.env_names() == ["pendulum", "pointgoal"]


def test_segments_and_actions_firewall():
    obs = [np.full(2, float(t)) for t in range(5)]
    tr = rail.Trajectory(obs)
    assert not tr.has_actions()
    spec = rail.SegmentSpec.parse("state_skip:2")
    assert str(spec) == "state_skip:2"
    assert rail.segment_matrix([tr], spec).shape == (4, 3)
    with pytest.raises(rail.ActionsUnavailable):
        rail.segment_matrix([tr], rail.SegmentSpec.parse("state_action"))


def test_discriminator_basics():
    cfg = rail.DiscConfig()
    cfg.hidden = 8
    s = rail.make_disc_state(4, cfg, seed=3)
    segs = np.zeros((4, 6))
    rewards = rail.imitation_rewards(s, segs, cfg)
    assert rewards.shape == (6,)
    lin = rail.make_mlp([3, 1], seed=2)
    w = np.asarray(lin.weights[0])
    assert math.isclose(rail.gradient_penalty(lin, np.ones((3, 4))), float((w ** 2).sum()), rel_tol=1e-12)
    rep = rail.disc_update(s, np.ones((4, 8)), np.zeros((4, 8)), cfg, 1)
    assert s.updates_done == 1
    assert rep.total > 0


def test_gae_hand_example():
    r = np.array([1.0, 2.0])
    v = np.array([0.5, 0.5])
    nv = np.array([0.5, 0.0])
    z = np.zeros(2)
    adv = rail.gae_advantages(r, v, nv, z, z, 0.9, 0.8)
    d1 = 2.0 - 0.5
    d0 = 1.0 + 0.9 * 0.5 - 0.5
    assert np.allclose(adv, [d0 + 0.72 * d1, d1])


def test_config_and_score():
    cfg = rail.make_preset("saifo", "pendulum", desk=True)
    text = cfg.render()
    back = rail.parse_run_config(text)
    assert back.render() == text
    assert back.digest() == cfg.digest()
    cfg.set("backbone.tau", "0.01")
    assert cfg.digest() != back.digest()
    with pytest.raises(rail.ConfigError):
        cfg.set("backbone.tau", "fast")

    t = rail.TrialMetrics()
    recs = []
    for i in range(1, 11):
        r = rail.EvalRecord()
        r.env_steps = 1000 * i
        r.mean = float(i)
        recs.append(r)
    t.records = recs
    assert rail.score_config([t]) == 5.5


def test_short_trial_is_deterministic(tmp_path):
    cfg = rail.make_preset("saifo", "pendulum", desk=True)
    cfg.set("run.out", str(tmp_path))
    cfg.set("engine.total_steps", "400")
    cfg.set("engine.eval_every", "200")
    cfg.set("engine.eval_episodes", "1")
    cfg.set("backbone.start_steps", "300")
    # No demos: the trial is recorded as failed instead of raising.
    failed = rail.run_trial(cfg, 0)
    assert failed.failed
    assert "demo" in failed.error

    a = rail.run_trial(cfg, 0, _toy_demos(tmp_path))
    b = rail.run_trial(cfg, 0, _toy_demos(tmp_path))
    assert not a.failed
    assert len(a.records) == 2
    assert rail.metrics_to_jsonl(a) == rail.metrics_to_jsonl(b)


def _toy_demos(tmp_path):
    header = (
        '{"format":"rail-demo","version":1,"env":"pendulum","obs_dim":3,"act_dim":1,'
        '"actions_included":false,"episodes":1,"transitions":20,"expert_mean_return":-100.0,'
        '"seed":0,"episode_returns":[-100.0]}'
    )
    env = rail.make_env("pendulum")
    o = env.reset(3)
    lines = [header]
    for t in range(20):
        n = env.step(np.array([0.5])).next_obs
        lines.append("0\t%d\t%s\t%s" % (t, " ".join("%.17g" % v for v in o), " ".join("%.17g" % v for v in n)))
        o = n
    p = tmp_path / "obs.demo"
    p.write_text("\n".join(lines) + "\n")
    d = rail.load_demos(str(p))
    assert not d.actions_included
    assert d.transitions() == 20
    return d


def test_module_location():
    build = os.environ.get("RAIL_PYTHON_DIR")
    if build:
        assert os.path.realpath(rail._rail.__file__).startswith(os.path.realpath(build))
