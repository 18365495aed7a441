"""Experiment configuration: dataclasses loaded from TOML or JSON files."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import ParameterError, ProblemConfig

KINDS = ("convergence", "normality", "sddp_gap", "compare")


class ConfigError(ValueError):
    pass


@dataclass
class SeedConfig:
    base: int = 0
    replications: int = 1


@dataclass
class EpisodeConfig:
    n_episodes: int = 5
    horizon: int = 20
    batch_size: int = 100
    iters: int = 30
    k2: int = 1
    batch_mode: str = "fixed"
    validity: str = "both"
    normalize_weights: bool = True
    lp_method: str = "highs"


@dataclass
class ConvergenceOptions:
    n_episodes: int = 50
    batch: int = 20
    burn_in: int = 200
    stationary_steps: int = 2000


@dataclass
class NormalityOptions:
    n_obs: int = 100
    x0: float = 0.0
    bins: int = 30
    # multiplies the delta-method sigma; 1.0 except for negative controls
    sigma_scale: float = 1.0


@dataclass
class SddpGapOptions:
    x0: float = 1.0
    stationary_samples: int = 2000
    variants: tuple = ("warm", "cold")
    oracle_checks: bool = False
    oracle_step: float = 0.01
    soundness_points: int = 100


@dataclass
class CompareOptions:
    theta_star: float = 5.0
    n_init: int = 10
    iterations: int = 100
    mc: int = 100
    episode_length: int = 5
    schedules: tuple = ("constant", "lazy")
    n_thetas: tuple = (2, 5)
    lazy_factor: float = 0.5
    quantile_method: str = "lower"
    quantile_target: str = "mean"
    late_window: int = 20


_OPTIONS = {
    "convergence": ConvergenceOptions,
    "normality": NormalityOptions,
    "sddp_gap": SddpGapOptions,
    "compare": CompareOptions,
}


@dataclass
class ExperimentConfig:
    kind: str
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    options: Any = None
    label: str = ""
    out_dir: str = "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.options is None:
            self.options = _OPTIONS[self.kind]()
        if self.seeds.replications < 1:
            raise ConfigError("seeds.replications must be >= 1")


def _build(cls, data: Optional[dict], where: str):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {sorted(unknown)}")
    for f in fields(cls):
        if f.name in data and isinstance(data[f.name], list):
            data[f.name] = tuple(data[f.name])
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"[{where}] {e}") from None


def config_from_dict(d: dict, kind: Optional[str] = None) -> ExperimentConfig:
    d = dict(d)
    kind = kind or d.get("kind")
    if kind is None:
        raise ConfigError("config needs a 'kind'")
    if d.get("kind", kind) != kind:
        raise ConfigError(f"config is for {d['kind']!r}, not {kind!r}")
    allowed = {"kind", "problem", "seeds", "episodes", "options", "label", "out_dir"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    try:
        problem = ProblemConfig.from_dict(d.get("problem", {}))
    except (ParameterError, TypeError) as e:
        raise ConfigError(f"[problem] {e}") from None
    if kind not in _OPTIONS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    return ExperimentConfig(
        kind=kind,
        problem=problem,
        seeds=_build(SeedConfig, d.get("seeds"), "seeds"),
        episodes=_build(EpisodeConfig, d.get("episodes"), "episodes"),
        options=_build(_OPTIONS[kind], d.get("options"), "options"),
        label=str(d.get("label", "")),
        out_dir=str(d.get("out_dir", "out")),
    )


def load_config(path, kind: Optional[str] = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    try:
        if p.suffix.lower() == ".json":
            d = json.loads(text)
        else:
            d = tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse {p}: {e}") from None
    return config_from_dict(d, kind)
