"""T-TD3: TD3 with a time-attenuating, reward-modulated exploration schedule.

The exploration std follows

    sigma = beta * u_max * exp(-lambda * t) + (1 - beta) * u_max * exp(-delta)

where ``t`` is the global environment step and ``delta`` aggregates the
min-max normalized rewards of the latest minibatch. ``algorithm="td3"``
holds sigma at ``td3_sigma`` and skips the schedule update.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dynamics import DivergedSimulationError
from .nets import Adam, Mlp, forward_with_cache, mlp_backward, mlp_forward, mlp_init, save_checkpoint
from .trajectories import make_rng

log = logging.getLogger(__name__)

CURVE_HEADER = ["step", "episodes", "sigma", "critic1_loss", "critic2_loss", "actor_loss",
                "eval_return", "eval_tracking_error"]


class TrainingDivergedError(RuntimeError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    batch_size: int = 256
    policy_delay: int = 2
    target_noise_clip: float = 0.1
    u_max: float = 1.0
    beta: float = 0.08
    lam: float = 0.01
    tau: float = 0.005
    buffer_capacity: int = 1_000_000
    total_steps: int = 300_000
    warmup_steps: int = 10_000
    n_envs: int = 20
    seed: int = 0
    algorithm: str = "ttd3"
    td3_sigma: float = 0.1
    delta_aggregator: str = "sum"
    hidden: tuple = (256, 256)
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    lr_decay: float = 0.9995
    eval_interval: int = 5000
    checkpoint_interval: int = 50_000

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        checks = [
            (0 < self.gamma <= 1, "gamma must be in (0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.policy_delay >= 1, "policy_delay must be >= 1"),
            (self.target_noise_clip > 0, "target_noise_clip must be positive"),
            (self.u_max > 0, "u_max must be positive"),
            (0 < self.tau <= 1, "tau must be in (0, 1]"),
            (0 <= self.beta <= 1, "beta must be in [0, 1]"),
            (self.lam >= 0, "lam must be nonnegative"),
            (self.buffer_capacity >= self.batch_size, "buffer_capacity must be >= batch_size"),
            (self.total_steps >= 0, "total_steps must be nonnegative"),
            (self.warmup_steps >= 0, "warmup_steps must be nonnegative"),
            (self.n_envs >= 1, "n_envs must be >= 1"),
            (self.algorithm in ("ttd3", "td3"), "algorithm must be 'ttd3' or 'td3'"),
            (self.td3_sigma >= 0, "td3_sigma must be nonnegative"),
            (self.delta_aggregator in ("sum", "mean"), "delta_aggregator must be 'sum' or 'mean'"),
            (len(self.hidden) >= 1 and min(self.hidden) >= 1, "hidden must list positive widths"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive"),
            (0 < self.lr_decay <= 1, "lr_decay must be in (0, 1]"),
            (self.eval_interval >= 1, "eval_interval must be >= 1"),
            (self.checkpoint_interval >= 1, "checkpoint_interval must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool = False


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.r)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions stored in preallocated arrays."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros((self.capacity, act_dim))
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self.cursor = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self.cursor
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s2[i] = tr.s2
        self.done[i] = tr.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __getitem__(self, k: int) -> Transition:
        """``k``-th oldest stored transition."""
        if not 0 <= k < self.size:
            raise IndexError(k)
        i = (self.cursor - self.size + k) % self.capacity
        return Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]), self.s2[i].copy(), bool(self.done[i]))

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size < 1 or n < 1:
            raise InsufficientDataError(f"cannot sample {n} transitions from a buffer holding {self.size}")
        idx = rng.integers(0, self.size, size=n)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])


def sigma_schedule(t: float, delta: float, beta: float = 0.08, lam: float = 0.01, u_max: float = 1.0) -> float:
    return beta * u_max * math.exp(-lam * t) + (1.0 - beta) * u_max * math.exp(-delta)


def reward_spread(rewards, aggregator: str = "sum") -> float:
    """Aggregate of min-max normalized rewards; 0 when the batch is (numerically) constant."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        raise InsufficientDataError("reward batch is empty")
    lo, hi = r.min(), r.max()
    if hi - lo < 1e-12:
        return 0.0
    norm = (r - lo) / (hi - lo)
    return float(norm.sum() if aggregator == "sum" else norm.mean())


@dataclass
class NoiseSchedule:
    sigma: float = 1.0
    t: int = 0
    beta: float = 0.08
    lam: float = 0.01
    u_max: float = 1.0
    aggregator: str = "sum"
    delta: float = 0.0

    def update(self, rewards, t: int | None = None) -> float:
        if t is not None:
            self.t = t
        self.delta = reward_spread(rewards, self.aggregator)
        self.sigma = sigma_schedule(self.t, self.delta, self.beta, self.lam, self.u_max)
        return self.sigma


def update_sigma(sched: NoiseSchedule, rewards, t: int | None = None) -> float:
    return sched.update(rewards, t)


def select_action(actor: Mlp, s, sigma: float, rng: np.random.Generator) -> np.ndarray:
    a = mlp_forward(actor, s)
    if sigma > 0:
        a = a + rng.normal(0.0, sigma, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def target_action(target_actor: Mlp, s2, sigma: float, clip: float, rng: np.random.Generator) -> np.ndarray:
    a = mlp_forward(target_actor, s2)
    if sigma > 0:
        a = a + np.clip(rng.normal(0.0, sigma, size=a.shape), -clip, clip)
    return np.clip(a, -1.0, 1.0)


def td_target(r, s2, a2, target_critic1: Mlp, target_critic2: Mlp, gamma: float, done=None) -> np.ndarray:
    """``r + gamma * min(Q1', Q2')``.

    Episodes end only by time limit, so ``done`` never cuts the bootstrap.
    """
    x = np.concatenate((s2, a2), axis=-1)
    q1 = mlp_forward(target_critic1, x)[..., 0]
    q2 = mlp_forward(target_critic2, x)[..., 0]
    return np.asarray(r, dtype=np.float64) + gamma * np.minimum(q1, q2)


def critic_loss_and_grads(critic: Mlp, s, a, y):
    q, cache = forward_with_cache(critic, np.concatenate((s, a), axis=-1))
    diff = q[:, 0] - y
    n = len(y)
    loss = float(diff @ diff) / n
    grads, _ = mlp_backward(critic, cache, (2.0 / n) * diff[:, None])
    return loss, grads


def update_critics(critics, optimizers, batch: Batch, y) -> list[float]:
    losses = []
    for critic, opt in zip(critics, optimizers):
        loss, grads = critic_loss_and_grads(critic, batch.s, batch.a, y)
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite critic loss {loss}")
        opt.step(critic, grads)
        losses.append(loss)
    return losses


def actor_objective_grads(actor: Mlp, critic: Mlp, s):
    """Mean ``Q(s, pi(s))`` and its gradient w.r.t. the actor parameters."""
    a, cache = forward_with_cache(actor, s)
    n = len(s)
    q, ccache = forward_with_cache(critic, np.concatenate((s, a), axis=-1))
    _, gx = mlp_backward(critic, ccache, np.full_like(q, 1.0 / n), param_grads=False)
    grads, _ = mlp_backward(actor, cache, gx[:, s.shape[-1]:], input_grad=False)
    return float(q.mean()), grads


def update_actor(actor: Mlp, critic: Mlp, optimizer: Adam, batch_s) -> float:
    """One ascent step on mean Q1(s, pi(s)); returns the loss ``-mean Q`` before the step."""
    objective, grads = actor_objective_grads(actor, critic, batch_s)
    if not math.isfinite(objective):
        raise TrainingDivergedError(f"non-finite actor objective {objective}")
    optimizer.step(actor, [-g for g in grads])
    return -objective


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    if target.dims != online.dims:
        raise ValueError(f"shape mismatch: target dims {target.dims} vs online dims {online.dims}")
    for t, o in zip(target.arrays(), online.arrays()):
        t *= 1.0 - tau
        t += tau * o


class Agent:
    """Actor and twin critics together with their target copies and Adam optimizers."""

    def __init__(self, obs_dim: int, act_dim: int, config: TrainerConfig):
        self.config = config
        self.obs_dim, self.act_dim = obs_dim, act_dim
        hidden = list(config.hidden)
        self.actor = mlp_init([obs_dim, *hidden, act_dim], "tanh", make_rng(config.seed, 11))
        self.critic1 = mlp_init([obs_dim + act_dim, *hidden, 1], "linear", make_rng(config.seed, 12))
        self.critic2 = mlp_init([obs_dim + act_dim, *hidden, 1], "linear", make_rng(config.seed, 13))
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt = Adam.for_params(self.actor, lr=config.actor_lr, decay=config.lr_decay)
        self.critic1_opt = Adam.for_params(self.critic1, lr=config.critic_lr, decay=config.lr_decay)
        self.critic2_opt = Adam.for_params(self.critic2, lr=config.critic_lr, decay=config.lr_decay)
        u0 = config.td3_sigma if config.algorithm == "td3" else sigma_schedule(0, 0.0, config.beta, config.lam, config.u_max)
        self.schedule = NoiseSchedule(u0, 0, config.beta, config.lam, config.u_max, config.delta_aggregator)
        self.critic_updates = 0
        self.actor_updates = 0
        self.last_losses = {"critic1_loss": math.nan, "critic2_loss": math.nan, "actor_loss": math.nan}

    @property
    def sigma(self) -> float:
        return self.schedule.sigma

    def act(self, obs) -> np.ndarray:
        return mlp_forward(self.actor, obs)

    def end_episodes(self, count: int) -> None:
        for opt in (self.actor_opt, self.critic1_opt, self.critic2_opt):
            opt.end_episode(count)

    def learn(self, batch: Batch, rng: np.random.Generator, t: int) -> dict:
        cfg = self.config
        sigma = self.schedule.sigma
        a2 = target_action(self.actor_target, batch.s2, sigma, cfg.target_noise_clip, rng)
        y = td_target(batch.r, batch.s2, a2, self.critic1_target, self.critic2_target, cfg.gamma, batch.done)
        l1, l2 = update_critics((self.critic1, self.critic2), (self.critic1_opt, self.critic2_opt), batch, y)
        self.critic_updates += 1
        self.last_losses["critic1_loss"], self.last_losses["critic2_loss"] = l1, l2
        if cfg.algorithm == "ttd3":
            self.schedule.update(batch.r, t)
        if self.critic_updates % cfg.policy_delay == 0:
            self.last_losses["actor_loss"] = update_actor(self.actor, self.critic1, self.actor_opt, batch.s)
            self.actor_updates += 1
            soft_update(self.critic1_target, self.critic1, cfg.tau)
            soft_update(self.critic2_target, self.critic2, cfg.tau)
            soft_update(self.actor_target, self.actor, cfg.tau)
        return dict(self.last_losses)

    def networks(self) -> dict:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
                "actor_target": self.actor_target, "critic1_target": self.critic1_target,
                "critic2_target": self.critic2_target}

    def optimizers(self) -> dict:
        return {"actor_opt": self.actor_opt, "critic1_opt": self.critic1_opt, "critic2_opt": self.critic2_opt}

    def save(self, path, step: int, meta: dict | None = None) -> None:
        meta = {"sigma": self.sigma, "critic_updates": self.critic_updates, "actor_updates": self.actor_updates,
                "config": asdict(self.config), **(meta or {})}
        save_checkpoint(path, self.networks(), self.optimizers(), step, meta,
                        {"actor_opt": "actor", "critic1_opt": "critic1", "critic2_opt": "critic2"})


@dataclass
class TrainResult:
    agent: Agent
    curve: list = field(default_factory=list)
    steps: int = 0
    episodes: int = 0
    final_checkpoint: str | None = None


def evaluate_policy(policy: Callable, env) -> tuple[float, float]:
    """Run one deterministic episode; returns (return, mean per-step tracking error)."""
    obs = env.reset()
    total, err, n = 0.0, 0.0, 0
    done = False
    while not done:
        res = env.step(policy(obs))
        total += res.reward
        err += res.info["error"]
        n += 1
        obs, done = res.observation, res.done
    return total, err / max(n, 1)


def write_curve(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for row in rows:
            w.writerow([row[k] if isinstance(row[k], int) else repr(float(row[k])) for k in CURVE_HEADER])


def read_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ("step", "episodes") else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def train(config: TrainerConfig, env_factory: Callable[[int], object], eval_env_factory: Callable[[], object] | None = None,
          out_dir: str | None = None, stop_when: Callable[[dict], bool] | None = None) -> TrainResult:
    """Run the full training loop.

    ``env_factory(seed)`` builds one training environment per worker; the
    ``n_envs`` workers are stepped in lockstep with a batched actor pass. The
    learner performs one update per collected transition once warmup is over.
    ``stop_when(curve_row)`` may end training early after an evaluation.
    """
    rng = make_rng(config.seed, 10)
    seeds = np.random.SeedSequence([config.seed, 20]).generate_state(config.n_envs, dtype=np.uint32)
    envs = [env_factory(int(s)) for s in seeds]
    eval_env = eval_env_factory() if eval_env_factory else None
    obs_dim, act_dim = envs[0].obs_dim, envs[0].act_dim
    agent = Agent(obs_dim, act_dim, config)
    buf = ReplayBuffer(min(config.buffer_capacity, max(config.total_steps, config.batch_size)), obs_dim, act_dim)
    obs = np.array([env.reset() for env in envs])
    result = TrainResult(agent)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def record(step):
        ev_ret, ev_err = evaluate_policy(agent.act, eval_env) if eval_env else (math.nan, math.nan)
        row = {"step": step, "episodes": result.episodes, "sigma": agent.sigma, **agent.last_losses,
               "eval_return": ev_ret, "eval_tracking_error": ev_err}
        result.curve.append(row)
        log.info("step %d episodes %d sigma %.4g eval_return %.4g eval_err %.4g", step, result.episodes,
                 agent.sigma, ev_ret, ev_err)
        return row

    step = 0
    record(0)
    next_eval = config.eval_interval
    next_ckpt = config.checkpoint_interval
    stopped = False
    while step < config.total_steps and not stopped:
        if step < config.warmup_steps:
            actions = rng.uniform(-config.u_max, config.u_max, size=(len(envs), act_dim))
        else:
            actions = select_action(agent.actor, obs, agent.sigma, rng)
        finished = 0
        for i, env in enumerate(envs):
            try:
                res = env.step(actions[i])
            except DivergedSimulationError as exc:
                raise TrainingDivergedError(f"simulation diverged at step {step} in worker {i}: {exc}") from exc
            buf.push(Transition(obs[i], actions[i], res.reward, res.observation, res.done))
            if res.done:
                obs[i] = env.reset()
                finished += 1
            else:
                obs[i] = res.observation
        step += len(envs)
        if finished:
            result.episodes += finished
            agent.end_episodes(finished)
        if step >= config.warmup_steps and len(buf) >= config.batch_size:
            for _ in range(len(envs)):
                try:
                    agent.learn(buf.sample(config.batch_size, rng), rng, step)
                except TrainingDivergedError as exc:
                    raise TrainingDivergedError(f"step {step}, episodes {result.episodes}, "
                                                f"sigma {agent.sigma}: {exc}") from exc
        if step >= next_eval or step >= config.total_steps:
            next_eval += config.eval_interval
            row = record(step)
            stopped = bool(stop_when and stop_when(row))
        if out_dir and step >= next_ckpt:
            next_ckpt += config.checkpoint_interval
            agent.save(os.path.join(out_dir, f"checkpoint_{step:09d}.qtck"), step, {"episodes": result.episodes})
    result.steps = step
    if out_dir:
        final = os.path.join(out_dir, "final.qtck")
        agent.save(final, step, {"episodes": result.episodes})
        result.final_checkpoint = final
        write_curve(os.path.join(out_dir, "learning_curve.csv"), result.curve)
    return result
