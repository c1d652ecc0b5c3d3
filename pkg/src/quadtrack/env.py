"""Trajectory-tracking MDPs.

``QuadTrackEnv`` wraps the quadrotor simulator; ``PointMassEnv`` is a cheap
3-D double integrator with the same interface, used to exercise the trainer.

Quadrotor observation layout (17 reals)::

    [0:3]   position p(t)
    [3:6]   velocity v(t)
    [6:10]  attitude quaternion (w, x, y, z)
    [10:13] next reference point p_d(t+1)
    [13:16] p_d(t+1) - p(t)
    [16]    ||p_d(t) - p(t)||
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import ControlInput, QuadParams, QuadState
from .mathcore import quat_from_axis_angle
from .trajectories import ReferenceTrajectory, TrainingReferenceConfig, make_rng, random_training_reference

QUAD_OBS_DIM = 17
QUAD_ACT_DIM = 4
POINTMASS_OBS_DIM = 13
POINTMASS_ACT_DIM = 3

TRACE_HEADER = ["step", "t", "x", "y", "z", "x_d", "y_d", "z_d", "a0", "a1", "a2", "a3", "reward", "err"]


class EpisodeBoundsError(IndexError):
    pass


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    rho1: float = 1.0
    rho2: float = 0.01
    omega_diag: tuple = (1.0, 1.0, 1.0, 1.0)
    mode: str = "combined"

    def __post_init__(self):
        object.__setattr__(self, "omega_diag", tuple(float(w) for w in self.omega_diag))
        if self.rho1 < 0 or self.rho2 < 0:
            raise ValueError(f"reward weights must be nonnegative, got rho1={self.rho1}, rho2={self.rho2}")
        if not all(w > 0 for w in self.omega_diag):
            raise ValueError(f"input weight matrix must be positive definite, got diag {self.omega_diag}")
        if self.mode not in ("combined", "literal"):
            raise ValueError(f"reward mode must be 'combined' or 'literal', got {self.mode!r}")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def observe(state: QuadState, ref: ReferenceTrajectory, t: int) -> np.ndarray:
    if t < 0 or t + 1 >= len(ref):
        raise EpisodeBoundsError(f"step {t} needs reference index {t + 1}, trajectory has {len(ref)} points")
    nxt = ref.points[t + 1]
    obs = np.empty(QUAD_OBS_DIM)
    obs[0:3] = state.p
    obs[3:6] = state.v
    obs[6:10] = state.q
    obs[10:13] = nxt
    obs[13:16] = nxt - state.p
    obs[16] = math.dist(ref.points[t], state.p)
    return obs


def decode_action(a, params: QuadParams = QuadParams()) -> ControlInput:
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    thrust = params.f_min + 0.5 * (a[0] + 1.0) * (params.f_max - params.f_min)
    return ControlInput(thrust, a[1:4] * params.omega_max)


def reward_error(p, p_d) -> float:
    dist = math.dist(p_d, p)
    sq = dist * dist
    return dist if sq <= 1.0 else sq


def reward_input(u, omega) -> float:
    """``-u^T Omega u``; ``omega`` is a full matrix or its diagonal."""
    u = np.asarray(u, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim == 1:
        return -float(np.sum(omega * u * u))
    return -float(u @ omega @ u)


def reward_total(r_e: float, r_u: float, config: RewardConfig) -> float:
    if config.mode == "literal":
        return -config.rho1 * r_e - config.rho2
    return -config.rho1 * r_e + config.rho2 * r_u


def _pad_reference(ref: ReferenceTrajectory, n_points: int) -> ReferenceTrajectory:
    if len(ref) >= n_points:
        return ref
    tail = np.repeat(ref.points[-1:], n_points - len(ref), axis=0)
    return ReferenceTrajectory(np.vstack((ref.points, tail)), dt=ref.dt, name=ref.name)


def _sample_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return d * radius * rng.uniform() ** (1.0 / 3.0)


class TrackingEnv:
    """Shared episode bookkeeping; subclasses provide the physics and observation."""

    obs_dim: int
    act_dim: int

    def __init__(self, reward: RewardConfig, reference: ReferenceTrajectory | None, mode: str,
                 episode_steps: int, seed: int):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if mode == "eval" and reference is None:
            raise ValueError("evaluation mode needs a fixed reference trajectory")
        if len(reward.omega_diag) != self.act_dim:
            raise ValueError(f"input weight diagonal has {len(reward.omega_diag)} entries, "
                             f"action dimension is {self.act_dim}")
        self.reward_config = reward
        self.fixed_reference = reference
        self.mode = mode
        self.episode_steps = int(episode_steps)
        self._omega = np.array(reward.omega_diag)
        self._rng = make_rng(seed)
        self.reference: ReferenceTrajectory | None = None
        self.t = 0
        self.done = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = make_rng(seed)
        if self.mode == "eval":
            ref = self.fixed_reference
        else:
            ref = self._training_reference(int(self._rng.integers(2**62)))
        self.reference = _pad_reference(ref, self.episode_steps + 2)
        self._spawn(self._rng if self.mode == "train" else None)
        self.t = 0
        self.done = False
        return self._observe()

    def step(self, a) -> StepResult:
        if self.done:
            raise EpisodeFinishedError("episode finished; call reset() before stepping again")
        a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
        applied = self._advance(a)
        self.t += 1
        p = self.position
        p_d = self.reference.points[self.t]
        err = math.dist(p_d, p)
        r = reward_total(reward_error(p, p_d), reward_input(a, self._omega), self.reward_config)
        self.done = self.t >= self.episode_steps
        info = {"error": err, "applied": applied, "action": a, "position": p.copy(), "reference": p_d.copy()}
        return StepResult(self._observe(), r, self.done, info)

    @property
    def position(self) -> np.ndarray:
        raise NotImplementedError

    def _training_reference(self, seed: int) -> ReferenceTrajectory:
        raise NotImplementedError

    def _spawn(self, rng: np.random.Generator | None) -> None:
        raise NotImplementedError

    def _advance(self, a: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError


class QuadTrackEnv(TrackingEnv):
    obs_dim = QUAD_OBS_DIM
    act_dim = QUAD_ACT_DIM

    def __init__(self, params: QuadParams = QuadParams(), reward: RewardConfig = RewardConfig(),
                 reference: ReferenceTrajectory | None = None, mode: str = "train",
                 episode_steps: int = 3000, spawn_radius: float = 0.3, spawn_speed: float = 0.2,
                 training_reference: TrainingReferenceConfig = TrainingReferenceConfig(), seed: int = 0):
        self.params = params
        self.spawn_radius = spawn_radius
        self.spawn_speed = spawn_speed
        self.training_reference = training_reference
        self.state = QuadState()
        super().__init__(reward, reference, mode, episode_steps, seed)

    @property
    def position(self) -> np.ndarray:
        return self.state.p

    def _training_reference(self, seed):
        return random_training_reference(seed, self.episode_steps + 2, self.training_reference, self.params.dt)

    def _spawn(self, rng):
        start = self.reference.points[0]
        if rng is None:
            self.state = QuadState(p=start.copy())
            return
        p = start + _sample_ball(rng, self.spawn_radius)
        v = _sample_ball(rng, self.spawn_speed)
        q = quat_from_axis_angle((0.0, 0.0, 1.0), rng.uniform(-math.pi, math.pi))
        self.state = QuadState(p, v, q, np.zeros(3))

    def _advance(self, a):
        u = dynamics.clamp_input(decode_action(a, self.params), self.params)
        self.state = dynamics.step(self.state, u, self.params)
        return u.as_array()

    def _observe(self):
        return observe(self.state, self.reference, self.t)


def line_reference(velocity, n_steps: int, dt: float, start=(0.0, 0.0, 0.0), name: str = "line") -> ReferenceTrajectory:
    k = np.arange(n_steps)[:, None] * dt
    return ReferenceTrajectory(np.asarray(start, dtype=np.float64) + k * np.asarray(velocity, dtype=np.float64),
                               dt=dt, name=name)


class PointMassEnv(TrackingEnv):
    """3-D double integrator ``p' = v, v' = a`` with ``|a_i| <= accel_max`` tracking a line.

    Observation (13 reals): ``p_d(t+1) - p``, ``v``, reference velocity,
    reference velocity minus ``v``, and ``||p_d(t) - p||``.
    """

    obs_dim = POINTMASS_OBS_DIM
    act_dim = POINTMASS_ACT_DIM

    def __init__(self, reward: RewardConfig = RewardConfig(omega_diag=(1.0, 1.0, 1.0)),
                 reference: ReferenceTrajectory | None = None, mode: str = "train",
                 episode_steps: int = 200, dt: float = 0.05, accel_max: float = 1.0,
                 speed_max: float = 0.5, spawn_radius: float = 0.5, seed: int = 0):
        self.dt = dt
        self.accel_max = accel_max
        self.speed_max = speed_max
        self.spawn_radius = spawn_radius
        self.p = np.zeros(3)
        self.v = np.zeros(3)
        super().__init__(reward, reference, mode, episode_steps, seed)

    @property
    def position(self) -> np.ndarray:
        return self.p

    def _training_reference(self, seed):
        rng = make_rng(seed, 4)
        d = rng.normal(size=3)
        vel = d / np.linalg.norm(d) * rng.uniform(0.0, self.speed_max)
        return line_reference(vel, self.episode_steps + 2, self.dt, name=f"line-{seed}")

    def _spawn(self, rng):
        start = self.reference.points[0]
        if rng is None:
            self.p, self.v = start.copy(), np.zeros(3)
        else:
            self.p, self.v = start + _sample_ball(rng, self.spawn_radius), np.zeros(3)

    def _advance(self, a):
        acc = a * self.accel_max
        self.p = self.p + self.v * self.dt + 0.5 * acc * self.dt**2
        self.v = self.v + acc * self.dt
        return acc

    def _observe(self):
        t = self.t
        if t + 1 >= len(self.reference):
            raise EpisodeBoundsError(f"step {t} outside reference of {len(self.reference)} points")
        pts = self.reference.points
        e = pts[t + 1] - self.p
        v_ref = (pts[t + 1] - pts[t]) / self.dt
        return np.concatenate((e, self.v, v_ref, v_ref - self.v, [math.dist(pts[t], self.p)]))
