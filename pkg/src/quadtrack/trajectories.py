"""Reference trajectories: the spiral benchmark, LOS-style random walks, training references.

All randomness comes from ``numpy.random.Generator`` with the PCG64 bit
generator seeded through ``numpy.random.SeedSequence``; identical seeds give
identical trajectories on any platform running the same numpy generator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

LOSRT_START = ((0.0, 0.0, 0.0), (0.1, 0.1, 0.1))
LOSRT_CLIMB = 0.0001


def make_rng(seed, *stream) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally forked into an independent sub-stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass
class ReferenceTrajectory:
    points: np.ndarray
    dt: float = 0.001
    name: str = "custom"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("reference trajectory contains non-finite points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> int:
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "x_d", "y_d", "z_d"])
            for i, (x, y, z) in enumerate(self.points):
                w.writerow([i, repr(i * self.dt), repr(float(x)), repr(float(y)), repr(float(z))])

    @classmethod
    def from_csv(cls, path, name: str | None = None) -> "ReferenceTrajectory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trajectory file")
        pts = [[float(r["x_d"]), float(r["y_d"]), float(r["z_d"])] for r in rows]
        dt = float(rows[1]["t"]) - float(rows[0]["t"]) if len(rows) > 1 else 0.001
        return cls(np.array(pts), dt=dt, name=name or str(path))


def spiral_rt(t: float) -> np.ndarray:
    r = 0.1 * t
    phase = math.pi * t / 20.0
    return np.array([r * math.cos(phase), r * math.sin(phase), r])


def spiral_trajectory(n_steps: int = 3000, dt: float = 0.001) -> ReferenceTrajectory:
    return ReferenceTrajectory(np.array([spiral_rt(i * dt) for i in range(n_steps)]), dt=dt, name="spiral")


@dataclass(frozen=True)
class LosRtConfig:
    theta_min: float = -math.pi / 120
    theta_max: float = math.pi / 120
    p_min: float = 1.5
    p_max: float = 2.5
    hold_steps: int = 100
    step_scale: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError(f"need theta_min < theta_max, got [{self.theta_min}, {self.theta_max}]")
        if not 0 < self.p_min < self.p_max:
            raise ValueError(f"need 0 < p_min < p_max, got [{self.p_min}, {self.p_max}]")
        if self.hold_steps < 1:
            raise ValueError(f"hold_steps must be >= 1, got {self.hold_steps}")
        if not self.step_scale > 0:
            raise ValueError(f"step_scale must be positive, got {self.step_scale}")


def _los_walk(config: LosRtConfig, n_steps: int, rng: np.random.Generator, heading: float = 0.0):
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    pts = np.empty((n_steps, 3))
    pts[0], pts[1] = LOSRT_START
    theta = dist = 0.0
    for t in range(1, n_steps - 1):
        # redraw on the first recursion step and at every multiple of hold_steps
        if t == 1 or t % config.hold_steps == 0:
            theta = rng.uniform(config.theta_min, config.theta_max)
            dist = rng.uniform(config.p_min, config.p_max) * config.step_scale
        pts[t + 1, 0] = pts[t, 0] + math.cos(theta + heading) * dist
        pts[t + 1, 1] = pts[t, 1] + math.sin(theta + heading) * dist
        pts[t + 1, 2] = pts[t, 2] + LOSRT_CLIMB
    return pts


def los_rt(config: LosRtConfig = LosRtConfig(), n_steps: int = 3000, dt: float = 0.001) -> ReferenceTrajectory:
    pts = _los_walk(config, n_steps, make_rng(config.seed))
    return ReferenceTrajectory(pts, dt=dt, name="losrt")


@dataclass(frozen=True)
class TrainingReferenceConfig:
    """Ranges the per-episode LOS parameters are drawn from."""

    half_angle_max: float = math.pi / 60
    p_low: float = 0.1
    p_high: float = 1.5
    hold_steps: int = 100
    step_scale: float = 0.001
    workspace_radius: float = 5.0


def max_reach(n_steps: int, p_max: float, step_scale: float) -> float:
    """Upper bound on ``max ||p_d||`` for a LOS walk of ``n_steps`` points."""
    horiz = math.hypot(*LOSRT_START[1][:2]) + max(n_steps - 2, 0) * p_max * step_scale
    vert = LOSRT_START[1][2] + max(n_steps - 2, 0) * LOSRT_CLIMB
    return math.hypot(horiz, vert)


def random_training_reference(
    seed: int,
    n_steps: int = 3000,
    config: TrainingReferenceConfig = TrainingReferenceConfig(),
    dt: float = 0.001,
) -> ReferenceTrajectory:
    """LOS walk with randomized heading, angle spread and step length, kept inside the workspace."""
    rng = make_rng(seed, 1)
    heading = rng.uniform(-math.pi, math.pi)
    half = rng.uniform(0.1, 1.0) * config.half_angle_max
    lo, hi = np.sort(rng.uniform(config.p_low, config.p_high, size=2))
    hi = max(hi, lo + 1e-6)
    scale = config.step_scale
    if max_reach(n_steps, hi, scale) > config.workspace_radius:
        # shrink the stride until the walk provably stays inside the workspace
        vert = LOSRT_START[1][2] + (n_steps - 2) * LOSRT_CLIMB
        horiz = math.sqrt(config.workspace_radius**2 - vert**2) - math.hypot(*LOSRT_START[1][:2])
        scale = 0.999 * horiz / ((n_steps - 2) * hi)
    los = LosRtConfig(-half, half, lo, hi, config.hold_steps, scale)
    pts = _los_walk(los, n_steps, rng, heading)
    return ReferenceTrajectory(pts, dt=dt, name=f"train-{seed}")


def make_reference(kind: str, n_steps: int = 3000, dt: float = 0.001, losrt: LosRtConfig | None = None,
                   seed: int | None = None) -> ReferenceTrajectory:
    if kind == "spiral":
        return spiral_trajectory(n_steps, dt)
    if kind == "losrt":
        cfg = losrt or LosRtConfig()
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return los_rt(cfg, n_steps, dt)
    if kind == "random":
        return random_training_reference(0 if seed is None else seed, n_steps, dt=dt)
    raise ValueError(f"unknown trajectory kind {kind!r}; expected spiral, losrt or random")
