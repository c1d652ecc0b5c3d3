"""Run configuration: one INI-style file with a section per component.

Example::

    [trainer]
    seed = 7
    total_steps = 300000

    [reward]
    omega_diag = (1.0, 1.0, 1.0, 1.0)

Values are Python literals (numbers, strings, tuples); bare words are read
as strings. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace

from .dynamics import QuadParams
from .env import PointMassEnv, QuadTrackEnv, RewardConfig, line_reference
from .trajectories import LosRtConfig, TrainingReferenceConfig, make_reference
from .ttd3 import TrainerConfig

OUTPUT_ROOT_ENV = "QUADTRACK_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "quad"
    episode_steps: int = 3000
    spawn_radius: float = 0.3
    spawn_speed: float = 0.2
    eval_trajectory: str = "spiral"
    pointmass_dt: float = 0.05
    pointmass_steps: int = 200
    pointmass_eval_velocity: tuple = (0.3, 0.1, 0.05)
    pointmass_train_steps: int = 50

    def __post_init__(self):
        if self.kind not in ("quad", "pointmass"):
            raise ValueError(f"kind must be 'quad' or 'pointmass', got {self.kind!r}")
        if min(self.episode_steps, self.pointmass_steps, self.pointmass_train_steps) < 1:
            raise ValueError("episode lengths must be >= 1")
        if self.eval_trajectory not in ("spiral", "losrt"):
            raise ValueError(f"eval_trajectory must be 'spiral' or 'losrt', got {self.eval_trajectory!r}")


@dataclass(frozen=True)
class RunSection:
    run_id: str = "run"
    output_dir: str = ""


SECTIONS = {
    "quad": QuadParams,
    "reward": RewardConfig,
    "trainer": TrainerConfig,
    "losrt": LosRtConfig,
    "training_reference": TrainingReferenceConfig,
    "env": EnvConfig,
    "run": RunSection,
}


@dataclass(frozen=True)
class RunConfig:
    quad: QuadParams = field(default_factory=QuadParams)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    losrt: LosRtConfig = field(default_factory=LosRtConfig)
    training_reference: TrainingReferenceConfig = field(default_factory=TrainingReferenceConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def output_root(self) -> str:
        return self.run.output_dir or os.environ.get(OUTPUT_ROOT_ENV, "runs")


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def _coerce(cls, key, value):
    default = {f.name: f for f in fields(cls)}[key].default
    if default is dataclasses.MISSING:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"expected a tuple, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        return str(value)
    return value


def build_config(values: dict) -> RunConfig:
    """Build a validated ``RunConfig`` from ``{section: {key: value}}``."""
    parts = {}
    for section, cls in SECTIONS.items():
        given = values.get(section, {})
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in given.items():
            if key not in known:
                raise ConfigError(f"{section}.{key}: unknown key (known: {', '.join(sorted(known))})")
            try:
                kwargs[key] = _coerce(cls, key, value)
            except ConfigError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
        try:
            parts[section] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{section}: {exc}") from None
    for section in values:
        if section not in SECTIONS:
            raise ConfigError(f"[{section}]: unknown section (known: {', '.join(SECTIONS)})")
    return RunConfig(**parts)


def parse_overrides(overrides) -> dict:
    out: dict = {}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.setdefault(section, {})[key] = _parse_value(raw.strip())
    return out


def read_config_values(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: {k: _parse_value(v) for k, v in parser[s].items()} for s in parser.sections()}


def load_config(path=None, overrides=()) -> RunConfig:
    values = read_config_values(path) if path else {}
    for section, kv in parse_overrides(overrides).items():
        values.setdefault(section, {}).update(kv)
    return build_config(values)


def config_to_values(cfg: RunConfig) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS}


def save_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, kv in config_to_values(cfg).items():
        parser[section] = {k: repr(v) for k, v in kv.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def env_factories(cfg: RunConfig, eval_reference=None):
    """``(train_factory(seed), eval_factory())`` for the configured environment."""
    e = cfg.env
    if e.kind == "pointmass":
        reward = cfg.reward if len(cfg.reward.omega_diag) == 3 else replace(cfg.reward, omega_diag=(1.0, 1.0, 1.0))
        ref = eval_reference or line_reference(e.pointmass_eval_velocity, e.pointmass_steps + 2, e.pointmass_dt)

        def train_env(seed):
            return PointMassEnv(reward, episode_steps=e.pointmass_train_steps, dt=e.pointmass_dt, seed=seed)

        def eval_env():
            return PointMassEnv(reward, reference=ref, mode="eval", episode_steps=e.pointmass_steps,
                                dt=e.pointmass_dt)
        return train_env, eval_env

    ref = eval_reference or make_reference(e.eval_trajectory, e.episode_steps + 1, cfg.quad.dt, cfg.losrt)

    def train_env(seed):
        return QuadTrackEnv(cfg.quad, cfg.reward, mode="train", episode_steps=e.episode_steps,
                            spawn_radius=e.spawn_radius, spawn_speed=e.spawn_speed,
                            training_reference=cfg.training_reference, seed=seed)

    def eval_env():
        return QuadTrackEnv(cfg.quad, cfg.reward, reference=ref, mode="eval", episode_steps=e.episode_steps)
    return train_env, eval_env
