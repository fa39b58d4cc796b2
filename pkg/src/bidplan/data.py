"""Offline trajectory datasets: scripted behavior policies, persistence, sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .env import EnvConfig, Trajectory, draw_stream, run_episode
from .errors import DatasetFormatError, DomainError

SCHEMA_VERSION = 1
POLICY_KINDS = ("constant-alpha", "noisy-constant", "pid-pacing")
DEFAULT_ALPHA_GRID = tuple(float(a) for a in np.geomspace(0.4, 4.0, 12))


@dataclass(frozen=True)
class BehaviorPolicySpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise DomainError(f"unknown behavior policy kind {self.kind!r}")


def default_policy_suite():
    """Fixed-factor bidders plus two pacing controllers (gentle and aggressive gains)."""
    return [
        BehaviorPolicySpec("constant-alpha", {"grid": DEFAULT_ALPHA_GRID}),
        BehaviorPolicySpec("noisy-constant", {"grid": DEFAULT_ALPHA_GRID, "noise": 0.3}),
        BehaviorPolicySpec("pid-pacing", {"a0": (0.5, 3.0), "kp": (0.05, 0.4), "ki": (0.0, 0.05)}),
        BehaviorPolicySpec("pid-pacing", {"a0": (0.3, 5.0), "kp": (0.2, 0.8), "ki": (0.0, 0.1)}),
    ]


def make_behavior_policy(spec: BehaviorPolicySpec, profile, rng: np.random.Generator, T: int):
    """Instantiate one episode's policy; per-episode constants are drawn here."""
    p = spec.params
    if spec.kind == "constant-alpha":
        alpha = float(rng.choice(p.get("grid", DEFAULT_ALPHA_GRID)))
        return lambda state: alpha

    if spec.kind == "noisy-constant":
        alpha = float(rng.choice(p.get("grid", DEFAULT_ALPHA_GRID)))
        noise = float(p.get("noise", 0.3))

        def policy(state):
            return max(0.0, alpha + noise * alpha * float(rng.standard_normal()))

        return policy

    # pid-pacing: multiplicative controller tracking a uniform spend schedule
    log_a0 = math.log(rng.uniform(*p.get("a0", (0.5, 3.0))))
    kp = rng.uniform(*p.get("kp", (0.05, 0.4)))
    ki = rng.uniform(*p.get("ki", (0.0, 0.05)))
    budget = profile.budget
    acc = [0.0]

    def policy(state):
        spent = budget - state.remaining_budget
        err = (state.t - 1) - spent * T / budget if budget > 0 else 0.0
        acc[0] += err
        return math.exp(min(3.0, max(-3.0, log_a0 + kp * err + ki * acc[0])))

    return policy


@dataclass(eq=False)
class OfflineDataset:
    trajectories: list
    T: int
    r_max: float
    r_m_empirical: float = 0.0
    seed: int = 0
    config_digest: str = ""
    n_bins: int = 32

    def __len__(self):
        return len(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (
            self.T == other.T
            and self.r_max == other.r_max
            and self.r_m_empirical == other.r_m_empirical
            and self.seed == other.seed
            and self.config_digest == other.config_digest
            and self.trajectories == other.trajectories
        )

    @property
    def y_m(self):
        return max((tr.quality for tr in self.trajectories), default=0.0)

    @property
    def condition_histogram(self):
        return condition_stats(self, self.n_bins)[1]

    @cached_property
    def arrays(self):
        """Column view used by the training loops (computed once)."""
        trs = self.trajectories
        budgets = np.array([tr.budget for tr in trs])
        costs = np.array([tr.costs for tr in trs]).reshape(len(trs), self.T)
        ids = [tr.profile_id for tr in trs]
        uniq = {pid: k for k, pid in enumerate(dict.fromkeys(ids))}
        return {
            "costs": costs,
            "norm_costs": costs / np.where(budgets > 0, budgets, 1.0)[:, None],
            "actions": np.array([tr.actions for tr in trs]).reshape(len(trs), self.T),
            "budgets": budgets,
            "features": np.array([tr.feature for tr in trs]).reshape(len(trs), -1),
            "qualities": np.array([tr.quality for tr in trs]),
            "profile_index": np.array([uniq[i] for i in ids], dtype=np.int64),
        }


def generate_dataset(profiles, policies, episodes_per_pair, seed, cfg: EnvConfig, config_digest=""):
    """Roll every behavior policy on every profile ``episodes_per_pair`` times.

    Each episode draws from its own generator seeded by
    ``SeedSequence(seed, spawn_key=(profile, policy, episode))``.
    """
    if not profiles or not policies:
        raise DomainError("need at least one profile and one behavior policy")
    if episodes_per_pair < 1:
        raise DomainError("episodes_per_pair must be >= 1")
    trajectories = []
    r_emp = 0.0
    for i, prof in enumerate(profiles):
        for j, spec in enumerate(policies):
            for k in range(episodes_per_pair):
                rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i, j, k)))
                stream = draw_stream(prof, rng, cfg)
                for values, prices in stream:
                    if len(values):
                        r_emp = max(r_emp, float(np.max(values / prices)))
                policy = make_behavior_policy(spec, prof, rng, cfg.T)
                trajectories.append(run_episode(policy, prof, rng, cfg, stream=stream))
    return OfflineDataset(trajectories, cfg.T, cfg.r_max, r_emp, seed, config_digest)


def _num(x):
    return format(float(x), ".17g")


def _seq(xs, fmt=_num):
    return "[" + ",".join(fmt(x) for x in xs) + "]"


def save(dataset: OfflineDataset, path):
    """Write one JSON header line then one trajectory per line."""
    header = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(dataset.seed),
        "config_digest": dataset.config_digest,
        "T": int(dataset.T),
        "R_m": float(dataset.r_max),
        "y_m": float(dataset.y_m),
        "r_m_empirical": float(dataset.r_m_empirical),
        "n_trajectories": len(dataset),
    }
    path = Path(path)
    with path.open("w") as fh:
        # json writes floats with their shortest round-trip repr
        fh.write(json.dumps(header) + "\n")
        for tr in dataset.trajectories:
            fh.write(
                "{"
                f'"profile_id":{json.dumps(tr.profile_id)},'
                f'"feature":{_seq(tr.feature)},'
                f'"budget":{_num(tr.budget)},'
                f'"costs":{_seq(tr.costs)},'
                f'"actions":{_seq(tr.actions)},'
                f'"rewards":{_seq(tr.rewards)},'
                f'"buy_counts":{_seq(tr.buy_counts, lambda c: str(int(c)))},'
                f'"quality":{_num(tr.quality)}'
                "}\n"
            )
    return path


_SEQ_FIELDS = ("costs", "actions", "rewards", "buy_counts")


def _check_record(rec, lineno, T, feature_dim):
    for key in ("profile_id", "feature", "budget", "quality", *_SEQ_FIELDS):
        if key not in rec:
            raise DatasetFormatError(lineno, key, "missing")
    if not isinstance(rec["profile_id"], str):
        raise DatasetFormatError(lineno, "profile_id", "must be a string")
    for key in ("budget", "quality"):
        v = rec[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v) or v < 0:
            raise DatasetFormatError(lineno, key, f"must be a finite non-negative number, got {v!r}")
    feat = rec["feature"]
    if not isinstance(feat, list) or not all(isinstance(v, (int, float)) for v in feat):
        raise DatasetFormatError(lineno, "feature", "must be a list of numbers")
    if feature_dim is not None and len(feat) != feature_dim:
        raise DatasetFormatError(lineno, "feature", f"length {len(feat)} != {feature_dim}")
    for key in _SEQ_FIELDS:
        seq = rec[key]
        if not isinstance(seq, list) or len(seq) != T:
            raise DatasetFormatError(lineno, key, f"must be a list of length {T}")
        for v in seq:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                raise DatasetFormatError(lineno, key, f"non-numeric entry {v!r}")
            if v < 0:
                raise DatasetFormatError(lineno, key, f"negative entry {v!r}")
        if key == "buy_counts" and not all(isinstance(v, int) for v in seq):
            raise DatasetFormatError(lineno, key, "entries must be integers")
    total = float(np.sum(np.asarray(rec["rewards"], dtype=np.float64)))
    if abs(total - rec["quality"]) > 1e-9 * max(1.0, abs(total)):
        raise DatasetFormatError(lineno, "quality", f"{rec['quality']!r} != sum of rewards {total!r}")
    if sum(rec["costs"]) > rec["budget"] * (1 + 1e-12):
        raise DatasetFormatError(lineno, "costs", "total cost exceeds budget")


def load(path):
    """Read a dataset file, validating every record."""
    path = Path(path)
    with path.open() as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(1, "header", "empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(1, "header", f"invalid JSON: {exc}") from None
    for key in ("schema_version", "seed", "config_digest", "T", "R_m", "y_m"):
        if key not in header:
            raise DatasetFormatError(1, key, "missing from header")
    if header["schema_version"] != SCHEMA_VERSION:
        raise DatasetFormatError(1, "schema_version", f"unsupported version {header['schema_version']!r}")
    T = header["T"]
    trajectories = []
    feature_dim = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(lineno, "record", f"invalid JSON: {exc}") from None
        if not isinstance(rec, dict):
            raise DatasetFormatError(lineno, "record", "must be a JSON object")
        _check_record(rec, lineno, T, feature_dim)
        feature_dim = len(rec["feature"])
        trajectories.append(
            Trajectory(
                rec["profile_id"],
                np.array(rec["feature"], dtype=np.float64),
                float(rec["budget"]),
                np.array(rec["actions"], dtype=np.float64),
                np.array(rec["costs"], dtype=np.float64),
                np.array(rec["rewards"], dtype=np.float64),
                np.array(rec["buy_counts"], dtype=np.int64),
                float(rec["quality"]),
            )
        )
    ds = OfflineDataset(
        trajectories,
        T,
        float(header["R_m"]),
        float(header.get("r_m_empirical", 0.0)),
        header["seed"],
        header["config_digest"],
    )
    if ds.y_m != header["y_m"]:
        raise DatasetFormatError(1, "y_m", f"header {header['y_m']!r} != max quality {ds.y_m!r}")
    return ds


def sample_batch(dataset: OfflineDataset, n, rng):
    """Uniform draws with replacement; each item carries its quality as condition."""
    if n < 1:
        raise DomainError("batch size must be >= 1")
    if len(dataset) == 0:
        raise DomainError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(dataset), size=n)
    return [(dataset.trajectories[i], dataset.trajectories[i].quality) for i in idx]


def _same_profile_groups(dataset):
    prof = dataset.arrays["profile_index"]
    groups = [np.flatnonzero(prof == k) for k in range(prof.max() + 1)] if len(prof) else []
    return [g for g in groups if len(g) >= 2]


def sample_pair_indices(dataset, n, rng):
    """Index pairs ``(i, j)``, ``i != j``, drawn within the same advertiser."""
    if len(dataset) < 2:
        raise DomainError("need at least two trajectories to form pairs")
    groups = _same_profile_groups(dataset)
    if not groups:
        raise DomainError("no advertiser has two or more trajectories")
    sizes = np.array([len(g) for g in groups], dtype=np.float64)
    which = rng.choice(len(groups), size=n, p=sizes / sizes.sum())
    first = np.empty(n, dtype=np.int64)
    second = np.empty(n, dtype=np.int64)
    for k, gi in enumerate(which):
        a, b = rng.choice(len(groups[gi]), size=2, replace=False)
        first[k], second[k] = groups[gi][a], groups[gi][b]
    return first, second


def perturb_costs(costs, budgets, noise_scale, rng):
    """Add bounded noise of size ``noise_scale * budget / T`` to cost rows."""
    costs = np.atleast_2d(costs)
    T = costs.shape[1]
    step = noise_scale * np.asarray(budgets, dtype=np.float64).reshape(-1, 1) / T
    return np.maximum(0.0, costs + step * rng.uniform(-1.0, 1.0, size=costs.shape))


def sample_pairs(dataset: OfflineDataset, n, mode, rng, noise_scale=0.05):
    """Trajectory pairs for Lipschitz probing.

    ``random`` pairs two distinct trajectories of one advertiser; ``perturbed``
    pairs a trajectory with a copy whose cost sequence carries bounded noise.
    """
    if mode == "random":
        first, second = sample_pair_indices(dataset, n, rng)
        trs = dataset.trajectories
        return [(trs[i], trs[j]) for i, j in zip(first, second)]
    if mode != "perturbed":
        raise DomainError(f"unknown pair mode {mode!r}")
    if len(dataset) < 2:
        raise DomainError("need at least two trajectories to form pairs")
    pairs = []
    for i in rng.integers(0, len(dataset), size=n):
        tr = dataset.trajectories[i]
        new_costs = perturb_costs(tr.costs, [tr.budget], noise_scale, rng)[0]
        twin = Trajectory(
            tr.profile_id, tr.feature, tr.budget, tr.actions, new_costs, tr.rewards, tr.buy_counts, tr.quality
        )
        pairs.append((tr, twin))
    return pairs


def condition_stats(dataset: OfflineDataset, n_bins=32):
    """Return ``(y_m, (counts, edges), r_m_empirical)``."""
    if len(dataset) == 0:
        raise DomainError("condition statistics need a nonempty dataset")
    q = np.array([tr.quality for tr in dataset.trajectories])
    y_m = float(q.max())
    counts, edges = np.histogram(q, bins=n_bins, range=(0.0, y_m if y_m > 0 else 1.0))
    return y_m, (counts, edges), dataset.r_m_empirical
