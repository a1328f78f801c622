"""Experiment configuration: dataclass sections with validated defaults.

A config file is TOML with optional ``[learner]``, ``[objective]``
(``name`` plus a ``[objective.params]`` table), ``[harness]``, ``[study]``
and ``[net]`` sections. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MODES = ("dfd", "fd", "es")


@dataclass
class LearnerConfig:
    mode: str = "dfd"
    sigma: float = 0.02
    batch_size: int = 40
    total_timesteps: int = 50_000_000
    optimizer: str = "adam"
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    reward_standardization: bool = True
    baseline: str = "estimated"  # or "measured": roll out theta_u on the learner
    baseline_ratio: float = 0.2
    history_depth: int = 64
    obs_standardization: bool = True
    obs_clip: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.sigma <= 0 or self.batch_size < 1:
            raise ValueError("sigma must be > 0 and batch_size >= 1")
        if self.mode == "es" and self.batch_size % 2:
            raise ValueError("ES needs an even batch size (N/2 antithetic pairs)")
        if self.baseline not in ("estimated", "measured"):
            raise ValueError("baseline must be 'estimated' or 'measured'")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class ObjectiveConfig:
    name: str = "point_mass"
    params: dict = field(default_factory=dict)


@dataclass
class HarnessConfig:
    workers: int = 4
    seed: int = 124
    step_time: float = 1.0  # virtual time per environment step
    duration_noise: float = 0.5  # log-sd of per-rollout multiplicative noise
    worker_speed_noise: float = 0.0  # log-sd of fixed per-worker speed factors
    update_latency: float = 0.0
    transport_latency: float = 0.0
    synchronous: bool = False
    eval_every: int = 1  # 0 disables policy evaluation
    eval_episodes: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("need at least one worker")


@dataclass
class StudyConfig:
    delays: list = field(default_factory=lambda: [1, 2, 4, 8])
    proportions: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    updates: int = 800
    seeds: list = field(default_factory=lambda: list(range(124, 134)))
    final_window: int = 50
    eval_episodes: int = 5
    bootstrap_resamples: int = 2000
    modes: list = field(default_factory=lambda: ["dfd", "fd"])


@dataclass
class NetConfig:
    host: str = "127.0.0.1"
    port: int = 0
    connect_retries: int = 5
    retry_delay: float = 0.2
    batch_timeout: float = 30.0


@dataclass
class Config:
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    net: NetConfig = field(default_factory=NetConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub_cls = f.default_factory
            values = dict(d.get(f.name, {}))
            allowed = {g.name for g in dataclasses.fields(sub_cls)}
            bad = set(values) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{f.name}]: {sorted(bad)}")
            kwargs[f.name] = sub_cls(**values)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "Config":
        """Copy with per-section overrides, e.g. ``replace(learner={"mode": "fd"})``."""
        d = self.to_dict()
        for name, values in sections.items():
            d[name].update(values)
        return Config.from_dict(d)


def load_config(path: str | Path | None = None) -> Config:
    if path is None:
        return Config()
    with open(path, "rb") as fh:
        return Config.from_dict(tomllib.load(fh))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: Config) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        nested = {k: v for k, v in values.items() if isinstance(v, dict)}
        lines.append(f"[{section}]")
        lines += [f"{k} = {_toml_value(v)}" for k, v in values.items() if k not in nested]
        for k, sub in nested.items():
            lines.append(f"\n[{section}.{k}]")
            lines += [f"{kk} = {_toml_value(vv)}" for kk, vv in sub.items()]
        lines.append("")
    return "\n".join(lines)
