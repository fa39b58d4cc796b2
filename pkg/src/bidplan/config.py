"""Experiment configuration: defaults, TOML files, CLI overrides, digests and seeds.

Precedence, lowest to highest: built-in defaults, the ``[section]`` tables of a
TOML file, command-line flags.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControllerConfig
from .env import EnvConfig
from .errors import DomainError
from .evaluator import EvaluatorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class DataConfig:
    n_train_advertisers: int = 20
    n_eval_advertisers: int = 10
    episodes_per_pair: int = 25


@dataclass
class PlannerConfig:
    sigma: float = 0.01
    window: int = 8
    hidden: tuple = (64, 64)
    beta2: float = 0.05
    beta3: float = 10.0
    # None: lp_factor times the dataset Lipschitz estimate over lp_bins
    # condition bins with lp_samples trajectories drawn per bin
    L_p: float | None = None
    lp_factor: float = 1.3
    lp_bins: int = 8
    lp_samples: int = 64
    epsilon: float = 0.05
    score_weight: float = 1.0
    n_rollouts: int = 256
    bc_batch: int = 64
    n_pairs: int = 64
    # share of penalty pairs drawn within local_scale * y_m of each other;
    # random pool pairs are too far apart to probe the local slope
    local_frac: float = 0.5
    local_scale: float = 0.02
    n_noise: int = 4
    baseline_decay: float = 0.99
    lr: float = 3e-4
    steps: int = 1000
    pretrain_steps: int = 2000
    pretrain_lr: float = 1e-3
    eval_every: int = 50
    max_grad_norm: float | None = 5.0


@dataclass
class EvalConfig:
    episodes_per_advertiser: int = 10
    budget_bins: int = 4
    exhaust_tol: float = 0.01
    lipschitz_pairs: int = 8000
    planner_noise: int = 16


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    data: DataConfig = field(default_factory=DataConfig)
    evaluator: EvaluatorConfig = field(default_factory=EvaluatorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = "runs"

    def as_dict(self):
        return {
            "env": dataclasses.asdict(self.env),
            "data": dataclasses.asdict(self.data),
            "evaluator": dataclasses.asdict(self.evaluator),
            "planner": dataclasses.asdict(self.planner),
            "controller": dataclasses.asdict(self.controller),
            "eval": dataclasses.asdict(self.eval),
            "seeds": list(self.seeds),
            "out": self.out,
        }

    @property
    def digest(self):
        """Hash of every setting that affects results (not seeds or output path)."""
        d = self.as_dict()
        d.pop("seeds")
        d.pop("out")
        blob = json.dumps(_plain(d), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


_SECTIONS = {
    "env": EnvConfig,
    "data": DataConfig,
    "evaluator": EvaluatorConfig,
    "planner": PlannerConfig,
    "controller": ControllerConfig,
    "eval": EvalConfig,
}


def _coerce(cls, values, section):
    known = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for k, v in values.items():
        if k not in known:
            raise DomainError(f"unknown setting {section}.{k}")
        out[k] = tuple(v) if isinstance(v, list) else v
    return out


def from_dict(d, base: ExperimentConfig | None = None):
    """Overlay a nested mapping (as read from TOML) on ``base``."""
    cfg = base or ExperimentConfig()
    updates = {}
    for key, value in d.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise DomainError(f"[{key}] must be a table")
            current = getattr(cfg, key)
            updates[key] = dataclasses.replace(current, **_coerce(_SECTIONS[key], value, key))
        elif key == "seeds":
            updates[key] = tuple(int(s) for s in value)
        elif key == "out":
            updates[key] = str(value)
        else:
            raise DomainError(f"unknown top-level setting {key!r}")
    cfg = dataclasses.replace(cfg, **updates)
    validate(cfg)
    return cfg


def load(path, base: ExperimentConfig | None = None):
    with Path(path).open("rb") as fh:
        return from_dict(tomllib.load(fh), base)


def preset(name):
    """Named configurations: ``desk`` (defaults) and ``table5`` (the larger simulated setting)."""
    if name == "desk":
        return ExperimentConfig()
    if name == "table5":
        env = EnvConfig(
            T=96,
            n_impressions=(50, 300),
            budget_range=(1000.0, 4000.0),
            budget_levels=(1500.0, 2000.0, 2500.0, 3000.0),
        )
        return ExperimentConfig(env=env, data=DataConfig(n_train_advertisers=30, n_eval_advertisers=10))
    raise DomainError(f"unknown preset {name!r}")


def validate(cfg: ExperimentConfig):
    d, p, e = cfg.data, cfg.planner, cfg.evaluator
    if d.n_train_advertisers < 1 or d.n_eval_advertisers < 0 or d.episodes_per_pair < 1:
        raise DomainError("advertiser and episode counts must be positive")
    if p.sigma <= 0 or p.epsilon <= 0:
        raise DomainError("planner sigma and epsilon must be positive")
    if p.beta2 < 0 or p.beta3 < 0 or e.beta1 < 0 or p.score_weight < 0:
        raise DomainError("loss weights must be non-negative")
    if p.L_p is not None and p.L_p <= 0:
        raise DomainError("L_p must be positive")
    if not cfg.seeds:
        raise DomainError("at least one seed is required")
    return cfg


# Every random draw of a run comes from SeedSequence(seed, spawn_key=(stage, ...)).
STAGES = ("profiles", "data", "evaluator", "controller", "planner_init", "pretrain", "planner", "eval", "lipschitz")


def stage_rng(seed, stage, *keys):
    if stage not in STAGES:
        raise DomainError(f"unknown seed stage {stage!r}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(STAGES.index(stage), *keys)))


def stage_seed(seed, stage):
    """Integer seed for APIs that take one (dataset generation)."""
    return int(stage_rng(seed, stage).integers(0, 2**31 - 1))
