import numpy as np
import pytest

from quadtrack.dynamics import QuadParams, QuadState
from quadtrack.env import (
    EpisodeBoundsError,
    EpisodeFinishedError,
    PointMassEnv,
    QuadTrackEnv,
    RewardConfig,
    decode_action,
    line_reference,
    observe,
    reward_error,
    reward_input,
    reward_total,
)
from quadtrack.trajectories import ReferenceTrajectory, spiral_trajectory


def _ref(points):
    return ReferenceTrajectory(np.array(points, dtype=float))


def test_observe_examples():
    ref = _ref([(0.2, 0.1, 0.0), (1, 0, 0), (2, 0, 0)])
    obs = observe(QuadState(p=(0.2, 0.1, 0.0)), ref, 0)
    assert obs.shape == (17,)
    assert obs[16] == 0.0
    obs = observe(QuadState(), ref, 0)
    np.testing.assert_array_equal(obs[10:16], (1, 0, 0, 1, 0, 0))
    np.testing.assert_array_equal(obs[6:10], (1, 0, 0, 0))
    with pytest.raises(EpisodeBoundsError):
        observe(QuadState(), ref, 2)


def test_observation_layout_frozen():
    ref = _ref([(0.5, -0.5, 1.0), (0.6, -0.4, 1.1), (0.7, -0.3, 1.2)])
    base = QuadState(p=(0.1, 0.2, 0.3), v=(0.4, 0.5, 0.6))
    o0 = observe(base, ref, 0)
    cases = [("p", 0, {0, 13, 16}), ("v", 0, {3}), ("q", 0, {6})]
    for attr, idx, expect in cases:
        s = base.copy()
        getattr(s, attr)[idx] += 0.25
        changed = set(np.flatnonzero(observe(s, ref, 0) != o0))
        assert changed == expect, attr
    # moving only the reference point p_d(t) touches only the distance slot
    ref2 = _ref(ref.points.copy())
    ref2.points[0, 2] += 0.25
    assert set(np.flatnonzero(observe(base, ref2, 0) != o0)) == {16}


def test_decode_examples():
    u = decode_action((-1, 0, 0, 0))
    assert u.thrust == 0 and np.all(u.omega == 0)
    u = decode_action((1, 1, 1, 1))
    assert u.thrust == 20 and np.all(u.omega == 6)
    u = decode_action((0, 0, 0, 0))
    assert u.thrust == 10 and np.all(u.omega == 0)
    u = decode_action((-1, -1, -1, -1))
    assert np.all(u.omega == -6)
    u = decode_action((3, -3, 0, 0))
    assert u.thrust == 20 and u.omega[0] == -6


def test_decode_monotone():
    grid = np.linspace(-1, 1, 101)
    for j in range(4):
        vals = []
        for g in grid:
            a = np.zeros(4)
            a[j] = g
            vals.append(decode_action(a).as_array()[j])
        assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("dist, expected", [(0.5, 0.5), (2.0, 4.0), (1.0, 1.0), (0.0, 0.0)])
def test_reward_error(dist, expected):
    assert reward_error((0, 0, 0), (0, dist, 0)) == pytest.approx(expected, abs=1e-15)


def test_reward_error_continuity():
    eps = 1e-6
    at_one = reward_error((0, 0, 0), (1, 0, 0))
    for d in np.linspace(1 - eps, 1 + eps, 201):
        assert abs(reward_error((0, 0, 0), (d, 0, 0)) - at_one) < 3 * eps


def test_reward_input():
    assert reward_input(np.zeros(4), np.ones(4)) == 0
    assert reward_input((1, 0, 0, 0), np.eye(4)) == -1
    assert reward_input((1, 1, 1, 1), np.ones(4)) == -4
    rng = np.random.default_rng(0)
    for _ in range(100):
        u = rng.normal(size=4)
        w = rng.uniform(0.1, 3, 4)
        assert reward_input(u, w) < 0
        assert reward_input(u, w) == pytest.approx(reward_input(u, np.diag(w)), rel=1e-14)


def test_reward_total():
    cfg = RewardConfig()
    assert reward_total(0, 0, cfg) == 0
    assert reward_total(2, -4, cfg) == pytest.approx(-2.04, abs=1e-15)
    assert reward_total(2, -4, RewardConfig(mode="literal")) == pytest.approx(-2.01, abs=1e-15)


@pytest.mark.parametrize("kw", [{"rho1": -1}, {"omega_diag": (1, 0, 1, 1)}, {"mode": "other"}])
def test_reward_config_validation(kw):
    with pytest.raises(ValueError):
        RewardConfig(**kw)


def _eval_env(**kw):
    return QuadTrackEnv(reference=spiral_trajectory(3001), mode="eval", **kw)


def test_episode_length_and_lifecycle():
    env = _eval_env()
    env.reset()
    steps = 0
    hover = np.array([2 * 14.715 / 20 - 1, 0, 0, 0])
    while True:
        res = env.step(hover)
        steps += 1
        assert res.reward <= 0
        if res.done:
            break
    assert steps == 3000
    with pytest.raises(EpisodeFinishedError):
        env.step(hover)


def test_zero_action_error_grows():
    env = _eval_env()
    obs = env.reset()
    errs = [obs[16]]
    for _ in range(3000):
        res = env.step(np.zeros(4))
        errs.append(res.observation[16])
    assert np.all(np.diff(errs[1:]) > 0)


def test_eval_reset_state():
    env = _eval_env()
    obs = env.reset()
    np.testing.assert_array_equal(obs[0:10], [0, 0, 0, 0, 0, 0, 1, 0, 0, 0])
    assert obs[16] == 0


def test_train_reset_determinism_and_spawn():
    env = QuadTrackEnv(spawn_radius=0.3, seed=4)
    a = env.reset(seed=11)
    b = QuadTrackEnv(spawn_radius=0.3).reset(seed=11)
    np.testing.assert_array_equal(a, b)
    for seed in range(50):
        obs = env.reset(seed=seed)
        assert obs[16] <= 0.3
        assert np.linalg.norm(obs[6:10]) == pytest.approx(1, abs=1e-12)


def test_episode_determinism():
    def rollout():
        env = QuadTrackEnv(seed=3)
        rng = np.random.default_rng(1)
        out = [env.reset()]
        for _ in range(300):
            res = env.step(rng.uniform(-1, 1, 4))
            out += [res.observation, np.array([res.reward])]
        return np.concatenate(out)

    a, b = rollout(), rollout()
    assert a.tobytes() == b.tobytes()


def test_eval_mode_needs_reference():
    with pytest.raises(ValueError):
        QuadTrackEnv(mode="eval")
    with pytest.raises(ValueError):
        QuadTrackEnv(reward=RewardConfig(omega_diag=(1, 1, 1)))


def test_short_reference_is_held():
    env = QuadTrackEnv(reference=_ref([(0, 0, 0), (0, 0, 0.001)]), mode="eval", episode_steps=5)
    env.reset()
    for _ in range(5):
        res = env.step(np.zeros(4))
    assert res.done
    np.testing.assert_array_equal(res.info["reference"], (0, 0, 0.001))


def test_pointmass_interface():
    env = PointMassEnv()
    assert (env.obs_dim, env.act_dim) == (13, 3)
    assert env.reset().shape == (13,)


def test_pointmass_ballistic_drift():
    ref = line_reference((0, 0, 0), 12, 0.05)
    env = PointMassEnv(reference=ref, mode="eval", episode_steps=10)
    env.reset()
    env.v = np.array([0.2, -0.1, 0.3])
    for k in range(1, 11):
        res = env.step(np.zeros(3))
        np.testing.assert_allclose(res.info["position"], np.array([0.2, -0.1, 0.3]) * 0.05 * k, atol=1e-15)


def test_pointmass_pd_oracle():
    # Closed-form double-integrator tracker: a = kp·e + kd·(v_ref - v)
    env = PointMassEnv(reference=line_reference((0.3, 0.1, 0.05), 202, 0.05), mode="eval")
    obs = env.reset()
    errs = []
    done = False
    while not done:
        res = env.step(np.clip(9.0 * obs[0:3] + 5.0 * obs[9:12], -1, 1))
        obs, done = res.observation, res.done
        errs.append(res.info["error"])
    assert len(errs) == 200
    assert np.mean(errs) < 0.05


def test_pointmass_train_spawn():
    env = PointMassEnv(spawn_radius=0.5)
    for seed in range(20):
        assert env.reset(seed)[12] <= 0.5

