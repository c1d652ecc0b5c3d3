"""Tracking metrics and controller timing, plus the multi-seed comparison harness.

Tracking error defaults to the unsquared sum of per-step Euclidean
distances; the squared-distance variant is available via ``squared=True``
and is always reported alongside.
"""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .env import TRACE_HEADER

METRIC_NOTE = ("tracking_error = sum_t ||p_d(t) - p(t)|| (unsquared); "
               "tracking_error_squared = sum_t ||p_d(t) - p(t)||^2; "
               "energy = sum_t sqrt(u_t^T u_t) on the normalized action")


@dataclass
class EpisodeRecord:
    reference: np.ndarray
    positions: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dt: float = 0.001
    controller_time: float = 0.0
    total_time: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.positions)

    def trace_rows(self):
        for k in range(len(self)):
            a = list(self.actions[k]) + [""] * (4 - self.actions.shape[1])
            yield {"step": k, "t": (k + 1) * self.dt,
                   "x": self.positions[k, 0], "y": self.positions[k, 1], "z": self.positions[k, 2],
                   "x_d": self.reference[k, 0], "y_d": self.reference[k, 1], "z_d": self.reference[k, 2],
                   "a0": a[0], "a1": a[1], "a2": a[2], "a3": a[3], "reward": self.rewards[k],
                   "err": math.dist(self.reference[k], self.positions[k])}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_HEADER)
            w.writeheader()
            for row in self.trace_rows():
                w.writerow({k: v if isinstance(v, (int, str)) else repr(float(v)) for k, v in row.items()})

    @classmethod
    def from_csv(cls, path) -> "EpisodeRecord":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        n_act = sum(1 for k in ("a0", "a1", "a2", "a3") if rows and rows[0][k] != "")
        col = lambda *keys: np.array([[float(r[k]) for k in keys] for r in rows])  # noqa: E731
        dt = float(rows[0]["t"]) if rows else 0.001
        return cls(col("x_d", "y_d", "z_d"), col("x", "y", "z"), col(*[f"a{i}" for i in range(n_act)]),
                   col("reward")[:, 0], dt=dt)


def run_episode(env, policy: Callable, metadata: dict | None = None, reset_seed: int | None = None) -> EpisodeRecord:
    """Roll out ``policy`` for one episode, timing only the policy calls."""
    obs = env.reset(reset_seed)
    refs, pos, acts, rews = [], [], [], []
    infer = 0.0
    start = time.perf_counter()
    done = False
    while not done:
        t0 = time.perf_counter()
        a = policy(obs)
        infer += time.perf_counter() - t0
        res = env.step(a)
        refs.append(res.info["reference"])
        pos.append(res.info["position"])
        acts.append(res.info["action"])
        rews.append(res.reward)
        obs, done = res.observation, res.done
    total = time.perf_counter() - start
    dt = getattr(env, "dt", None) or env.params.dt
    return EpisodeRecord(np.array(refs), np.array(pos), np.array(acts), np.array(rews), dt, infer, total,
                         dict(metadata or {}))


def tracking_error(rec: EpisodeRecord, squared: bool = False) -> float:
    d = np.linalg.norm(rec.reference - rec.positions, axis=1)
    return math.fsum(d * d) if squared else math.fsum(d)


def energy_loss(rec: EpisodeRecord) -> float:
    return math.fsum(np.sqrt(np.einsum("ij,ij->i", rec.actions, rec.actions)))


def summarize(rec: EpisodeRecord) -> dict:
    n = len(rec)
    te = tracking_error(rec)
    return {"steps": n, "tracking_error": te, "tracking_error_squared": tracking_error(rec, squared=True),
            "mean_tracking_error": te / max(n, 1), "energy": energy_loss(rec), "return": float(np.sum(rec.rewards)),
            "controller_time_s": rec.controller_time, "episode_time_s": rec.total_time}


@dataclass
class TimingResult:
    inference_s: float
    episode_s: float
    runs: list

    @property
    def per_step_ms(self) -> float:
        n = self.runs[0][2] if self.runs else 1
        return 1e3 * self.inference_s / max(n, 1)


def run_timing(policy: Callable, env, repeats: int = 3) -> TimingResult:
    """Mean per-episode controller compute time (physics excluded) over ``repeats`` episodes."""
    runs = []
    for _ in range(repeats):
        rec = run_episode(env, policy)
        runs.append((rec.controller_time, rec.total_time, len(rec)))
    return TimingResult(sum(r[0] for r in runs) / repeats, sum(r[1] for r in runs) / repeats, runs)


def _trapezoid(y, x) -> float:
    y, x = np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        return 0.0
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


@dataclass
class CurveBand:
    name: str
    steps: np.ndarray
    mean_return: np.ndarray
    band_return: np.ndarray
    mean_error: np.ndarray
    band_error: np.ndarray
    n_runs: int

    @property
    def auc(self) -> float:
        return _trapezoid(self.mean_return, self.steps)

    @property
    def final_return(self) -> float:
        return float(self.mean_return[-1]) if len(self.steps) else math.nan

    @property
    def final_error(self) -> float:
        return float(self.mean_error[-1]) if len(self.steps) else math.nan


def half_std(values, axis=0) -> np.ndarray:
    """Half the sample standard deviation; zero for a single run."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[axis] < 2:
        return np.zeros(np.delete(values.shape, axis))
    return 0.5 * values.std(axis=axis, ddof=1)


def aggregate(name: str, curves: list) -> CurveBand:
    """Align learning curves on environment steps present in every run."""
    if not curves:
        empty = np.array([])
        return CurveBand(name, empty, empty, empty, empty, empty, 0)
    common = sorted(set.intersection(*(set(r["step"] for r in c) for c in curves)))
    ret = np.array([[{r["step"]: r for r in c}[s]["eval_return"] for s in common] for c in curves])
    err = np.array([[{r["step"]: r for r in c}[s]["eval_tracking_error"] for s in common] for c in curves])
    return CurveBand(name, np.array(common), ret.mean(axis=0), half_std(ret), err.mean(axis=0), half_std(err),
                     len(curves))


@dataclass
class ComparisonReport:
    bands: dict
    failures: list = field(default_factory=list)

    def dominance_fraction(self, a: str, b: str) -> float:
        """Share of common checkpoints where ``a``'s mean return is >= ``b``'s."""
        ba, bb = self.bands[a], self.bands[b]
        common = sorted(set(ba.steps.tolist()) & set(bb.steps.tolist()))
        if not common:
            return math.nan
        ia = {s: i for i, s in enumerate(ba.steps.tolist())}
        ib = {s: i for i, s in enumerate(bb.steps.tolist())}
        wins = sum(ba.mean_return[ia[s]] >= bb.mean_return[ib[s]] for s in common)
        return wins / len(common)

    def rows(self) -> list[dict]:
        return [{"config": name, "runs": b.n_runs, "checkpoints": len(b.steps), "auc_return": b.auc,
                 "final_return": b.final_return, "final_tracking_error": b.final_error}
                for name, b in self.bands.items()]

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["config"])
            w.writeheader()
            for row in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})

    def to_text(self) -> str:
        lines = [f"# {METRIC_NOTE}", "# eval_tracking_error columns are mean per-step distances (m)",
                 "# bands are 0.5 x sample standard deviation across seeds", ""]
        cols = ["config", "runs", "checkpoints", "auc_return", "final_return", "final_tracking_error"]
        table = [cols] + [[f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in self.rows()]
        widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
        lines += ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in table]
        names = list(self.bands)
        for a in names:
            for b in names:
                if a != b:
                    lines.append(f"dominance({a} >= {b}) = {self.dominance_fraction(a, b):.3f}")
        for name, seed, msg in self.failures:
            lines.append(f"FAILED {name} seed={seed}: {msg}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        self.to_csv(os.path.join(out_dir, "report.csv"))
        with open(os.path.join(out_dir, "report.txt"), "w") as fh:
            fh.write(self.to_text())
        for name, b in self.bands.items():
            with open(os.path.join(out_dir, f"band_{name}.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "mean_return", "band_return", "mean_tracking_error", "band_tracking_error"])
                for i, s in enumerate(b.steps):
                    w.writerow([int(s)] + [repr(float(v[i])) for v in
                                           (b.mean_return, b.band_return, b.mean_error, b.band_error)])


def compare(configs: dict, seeds, env_factory: Callable, eval_env_factory: Callable,
            out_dir: str | None = None, train_fn: Callable | None = None) -> ComparisonReport:
    """Train every (config, seed) cell and aggregate the learning curves.

    ``configs`` maps a display name to a ``TrainerConfig``. A failing cell is
    recorded in ``report.failures`` and left out of the bands.
    """
    from .ttd3 import train

    train_fn = train_fn or train
    if not configs or not list(seeds):
        raise ValueError("compare needs at least one config and one seed")
    bands, failures = {}, []
    for name, cfg in configs.items():
        curves = []
        for seed in seeds:
            cell_dir = os.path.join(out_dir, f"{name}_seed{seed}") if out_dir else None
            try:
                result = train_fn(replace(cfg, seed=int(seed)), env_factory, eval_env_factory, cell_dir)
            except Exception as exc:  # noqa: BLE001 - a failed cell must not sink the report
                failures.append((name, int(seed), f"{type(exc).__name__}: {exc}"))
                continue
            curves.append(result.curve)
        bands[name] = aggregate(name, curves)
    report = ComparisonReport(bands, failures)
    if out_dir:
        report.write(out_dir)
    return report
