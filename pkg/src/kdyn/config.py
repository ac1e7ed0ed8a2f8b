"""INI-style run configuration.

Sections and keys mirror the dataclass fields::

    [data]   env, policy, n_traj, T, seed, max_torque
    [model]  ModelConfig fields
    [train]  TrainConfig fields (except ``model``)
    [eval]   horizon, n_samples, buckets, seed
    [plan]   PlanConfig fields plus episode_len, episodes
    [bench]  horizons, batch_size, repeats, warmup, iters, precision

Tuples are comma-separated. Precedence: command-line flags > file > defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .planner import PlanConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    env: str = "pendulum"
    policy: str = "uniform"
    n_traj: int = 100
    T: int = 200
    seed: int = 0
    max_torque: float = 5.0  # pendulum only


@dataclass
class EvalConfig:
    horizon: int = 100
    n_samples: int = 500
    buckets: tuple = (1, 10, 50, 100)
    seed: int = 0


@dataclass
class EpisodeConfig:
    episode_len: int = 200
    episodes: int = 5
    seed: int = 0


@dataclass
class BenchConfig:
    horizons: tuple = (10, 50, 100, 200, 500)
    batch_size: int = 256
    repeats: int = 5
    warmup: int = 10
    iters: int = 3  # timed iterations per repetition
    precision: str = "float64"

    def __post_init__(self):
        if not self.horizons or min(self.horizons) < 1:
            raise ConfigError("bench horizons must be a non-empty set of positive integers")
        if min(self.batch_size, self.repeats, self.iters) < 1 or self.warmup < 0:
            raise ConfigError("batch_size, repeats and iters must be >= 1; warmup >= 0")
        if self.precision != "float64":
            raise ConfigError("only float64 precision is supported")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, model=self.model)


_SECTIONS = {
    "data": "data",
    "model": "model",
    "train": "train",
    "eval": "eval",
    "plan": ("plan", "episode"),
    "bench": "bench",
}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            b = raw.lower()
            if b in ("1", "true", "yes", "on"):
                return True
            if b in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or default is None:
            if raw.lower() in ("", "none"):
                return None if default is None else ()
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = int if default and all(isinstance(d, int) for d in default) else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r} (expected {type(default).__name__})") from None


def _update(obj, values: dict, where: str):
    names = {f.name: f for f in dataclasses.fields(obj) if f.name != "model"}
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}; valid keys: {', '.join(sorted(names))}")
    changes = {k: _coerce(v, getattr(obj, k), f"{where}.{k}") if isinstance(v, str) else v for k, v in values.items()}
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid [{where}] settings: {exc}") from None


def apply_overrides(cfg: RunConfig, section: str, values: dict) -> RunConfig:
    """Return a copy of ``cfg`` with ``values`` (strings or typed) applied to ``section``."""
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]; valid sections: {', '.join(_SECTIONS)}")
    targets = _SECTIONS[section]
    if isinstance(targets, str):
        return dataclasses.replace(cfg, **{targets: _update(getattr(cfg, targets), values, section)})
    # [plan] feeds both the planner and the episode loop
    out = cfg
    for t in targets:
        keys = {f.name for f in dataclasses.fields(getattr(cfg, t))}
        part = {k: v for k, v in values.items() if k in keys}
        out = dataclasses.replace(out, **{t: _update(getattr(out, t), part, section)})
    known = set().union(*({f.name for f in dataclasses.fields(getattr(cfg, t))} for t in targets))
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}; valid keys: {', '.join(sorted(known))}")
    return out


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keys are case-sensitive (T)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    cfg = base or RunConfig()
    for section in cp.sections():
        cfg = apply_overrides(cfg, section, dict(cp[section]))
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    def fmt(v):
        if isinstance(v, tuple):
            return ", ".join(str(x) for x in v)
        return "none" if v is None else str(v)

    lines = []
    for section, targets in _SECTIONS.items():
        lines.append(f"[{section}]")
        for t in (targets,) if isinstance(targets, str) else targets:
            obj = getattr(cfg, t)
            for f in dataclasses.fields(obj):
                if f.name != "model":
                    lines.append(f"{f.name} = {fmt(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
