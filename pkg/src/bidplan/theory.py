"""Lipschitz estimators, transport distances, pacing pathologies and episode metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvConfig, draw_stream, make_profiles, run_episode
from .errors import DomainError
from .kernels import min_cost_assignment
from .planner import _coupled_dist, independent_coupled_w1, rollout, sync_coupled_w1


def l1_cost_matrix(a, b):
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1)


def empirical_w1(samples1, samples2):
    """1-Wasserstein distance between two equal-size empirical sets of sequences.

    The ground cost is the L1 distance between sequences; the optimal coupling
    of two uniform sets of equal size is a permutation, found exactly.
    """
    a = np.asarray(samples1, dtype=np.float64)
    b = np.asarray(samples2, dtype=np.float64)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if a.shape != b.shape:
        raise DomainError(f"sample sets differ in shape: {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise DomainError("empty sample sets")
    _, total = min_cost_assignment(l1_cost_matrix(a, b))
    return total / len(a)


def condition_bins(qualities, n_bins):
    """Equal-mass bins over the sorted conditions; returns index arrays."""
    order = np.argsort(qualities, kind="stable")
    return [b for b in np.array_split(order, n_bins) if len(b)]


def dataset_lipschitz(dataset, n_bins=8, n_sample=64, rng=None, return_pairs=False):
    """Lower bound on the planner Lipschitz constant implied by the data.

    Trajectories are split into ``n_bins`` equal-mass condition bins. For every
    bin pair, ``n_sample`` trajectories are drawn from each (bins with fewer
    members are skipped) and their empirical W1 is divided by the gap between
    the bins' mean conditions. Costs are budget-normalized and conditions are
    divided by ``y_m``.
    """
    if n_bins < 2 or n_sample < 1:
        raise DomainError("need n_bins >= 2 and n_sample >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    arrs = dataset.arrays
    if len(dataset) == 0:
        raise DomainError("empty dataset")
    y_m = dataset.y_m if dataset.y_m > 0 else 1.0
    q = arrs["qualities"] / y_m
    bins = [b for b in condition_bins(q, n_bins) if len(b) >= n_sample]
    if len(bins) < 2:
        raise DomainError(f"fewer than 2 condition bins hold {n_sample} trajectories")
    nc = arrs["norm_costs"]
    pairs = []
    for i in range(len(bins)):
        for j in range(i + 1, len(bins)):
            gap = abs(q[bins[i]].mean() - q[bins[j]].mean())
            if gap == 0:
                continue
            s1 = bins[i] if len(bins[i]) == n_sample else rng.choice(bins[i], n_sample, replace=False)
            s2 = bins[j] if len(bins[j]) == n_sample else rng.choice(bins[j], n_sample, replace=False)
            w = empirical_w1(nc[s1], nc[s2])
            pairs.append((i, j, w, gap))
    if not pairs:
        raise DomainError("all condition bins share the same mean condition")
    best = max(w / g for _, _, w, g in pairs)
    return (best, pairs) if return_pairs else best


def quality_lipschitz(dataset, n_pairs=8000, rng=None):
    """Largest ``|y1 - y2| / ||c1 - c2||`` over same-advertiser dataset pairs (raw units)."""
    from .data import sample_pair_indices

    rng = np.random.default_rng(0) if rng is None else rng
    arrs = dataset.arrays
    i, j = sample_pair_indices(dataset, n_pairs, rng)
    dist = np.linalg.norm(arrs["costs"][i] - arrs["costs"][j], axis=1)
    delta = np.abs(arrs["qualities"][i] - arrs["qualities"][j])
    keep = dist > 0
    return float((delta[keep] / dist[keep]).max()) if np.any(keep) else 0.0


@dataclass
class Theorem1Check:
    violation_rate: float
    n_pairs: int
    n_compared: int
    max_ratio: float
    bound: float


def _random_action_sequence(rng, T):
    kind = rng.integers(0, 3)
    if kind == 0:
        return np.full(T, math.exp(rng.uniform(-2.5, 2.5)))
    if kind == 1:
        return np.exp(rng.uniform(-2.5, 2.5, size=T))
    # piecewise-constant with a few switch points
    cuts = np.sort(rng.integers(0, T, size=3))
    levels = np.exp(rng.uniform(-2.5, 2.5, size=4))
    return levels[np.searchsorted(cuts, np.arange(T), side="right")]


def check_theorem1(cfg: EnvConfig, n_pairs, rng, slack=1e-9, detail=False):
    """Fraction of same-stream trajectory pairs breaking ``|dy| <= sqrt(T) R_m ||dc||``.

    Each pair replays one impression stream under two action sequences with
    the budget constraint lifted; the cost-space Lipschitz property is a claim
    about unsuspended auctions (a binding budget can reorder which impressions
    are affordable without changing total spend). Pairs at zero cost distance
    and zero quality gap are skipped.
    """
    bound = cfg.lipschitz_bound
    T = cfg.T
    violations = compared = 0
    max_ratio = 0.0
    for _ in range(n_pairs):
        (profile,) = make_profiles(cfg, 1, rng)
        stream = draw_stream(profile, rng, cfg)
        a1 = _random_action_sequence(rng, T)
        if rng.random() < 0.3:
            a2 = a1 * np.exp(rng.normal(0.0, 0.05, size=T))
        else:
            a2 = _random_action_sequence(rng, T)
        t1 = run_episode(lambda s, a=a1: float(a[s.t - 1]), profile, rng, cfg, stream, math.inf)
        t2 = run_episode(lambda s, a=a2: float(a[s.t - 1]), profile, rng, cfg, stream, math.inf)
        dy = abs(t1.quality - t2.quality)
        dc = float(np.linalg.norm(t1.costs - t2.costs))
        if dc == 0 and dy == 0:
            continue
        compared += 1
        if dy > bound * dc * (1 + slack):
            violations += 1
        if dc > 0:
            max_ratio = max(max_ratio, dy / dc)
    rate = violations / n_pairs if n_pairs else 0.0
    if detail:
        return Theorem1Check(rate, n_pairs, compared, max_ratio, bound)
    return rate


def condition_pairs(grid):
    """All unordered pairs of distinct values in a condition grid, shape ``(m, 2)``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 2:
        return grid
    i, j = np.triu_indices(len(grid), k=1)
    return np.stack([grid[i], grid[j]], axis=1)


def planner_pair_ratios(model, y1, y2, features, n_noise, rng, chunk=512):
    """Per-pair ``(distance, delta)``: condition gap in ``y / y_m`` units and coupled W1.

    Each pair gets its own ``n_noise`` shared noise sequences; the estimate per
    pair is the same as :func:`sync_coupled_w1`, batched over pairs.
    """
    y1 = np.asarray(y1, dtype=np.float64).reshape(-1)
    y2 = np.asarray(y2, dtype=np.float64).reshape(-1)
    m = len(y1)
    features = np.broadcast_to(np.asarray(features, dtype=np.float64), (m, model.feature_dim))
    delta = np.empty(m)
    for s in range(0, m, chunk):
        sl = slice(s, min(m, s + chunk))
        k = sl.stop - sl.start
        Y = np.repeat(np.stack([y1[sl], y2[sl]], axis=1), n_noise, axis=0)
        F = np.repeat(features[sl], n_noise, axis=0)
        eta = rng.standard_normal((k * n_noise, model.T))
        d, _ = _coupled_dist(model, Y, F, eta)
        delta[sl] = d.reshape(k, n_noise).mean(axis=1)
    return np.abs(y1 - y2) / model.y_m, delta


def planner_lipschitz_ratios(model, grid, n_noise, rng, features=None):
    """:func:`planner_pair_ratios` over every distinct pair of a condition grid."""
    pairs = condition_pairs(grid)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if features is None:
        features = np.zeros(model.feature_dim)
    return planner_pair_ratios(model, pairs[:, 0], pairs[:, 1], features, n_noise, rng)


def planner_lipschitz(model, grid, n_noise, rng, features=None):
    """Largest coupled-W1 to condition-gap ratio over the grid's pairs."""
    if len(condition_pairs(grid)) < 1:
        raise DomainError("the condition grid yields no pairs")
    dist, delta = planner_lipschitz_ratios(model, grid, n_noise, rng, features)
    if len(dist) == 0:
        raise DomainError("every condition pair is degenerate")
    return float(np.max(delta / dist))


@dataclass
class CouplingCheck:
    sync: float
    sync_se: float
    empirical: float
    empirical_se: float
    independent: float

    @property
    def pooled_se(self):
        return math.hypot(self.sync_se, self.empirical_se)


def coupling_check(model, y1, y2, n_samples, rng, features=()):
    """Synchronous-coupling estimate against the exact transport between sample sets.

    The two ``n_samples``-sized rollout sets at ``y1`` and ``y2`` share their
    noise draws, so they are matched samples of the two laws; the exact
    assignment between them is their empirical W1. The synchronous and
    independent estimates each use fresh noise. ``empirical_se`` is the
    standard error of the matched per-row distances.
    """
    eta = rng.standard_normal((n_samples, model.T))
    s1, _ = rollout(model, y1, features, eta)
    s2, _ = rollout(model, y2, features, eta)
    emp = empirical_w1(s1, s2)
    d = np.abs(s1 - s2).sum(axis=1)
    emp_se = float(d.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    sync, sync_se = sync_coupled_w1(model, y1, y2, n_samples, rng, features, return_se=True)
    indep = independent_coupled_w1(model, y1, y2, n_samples, rng, features)
    return CouplingCheck(sync, sync_se, emp, emp_se, indep)


@dataclass(frozen=True)
class PathologyFlags:
    excessive_step_spend: bool
    forward_pacing: bool
    backward_pacing: bool
    underutilization: bool

    @property
    def any(self):
        return self.excessive_step_spend or self.forward_pacing or self.backward_pacing or self.underutilization

    def names(self):
        return [k for k in ("excessive_step_spend", "forward_pacing", "backward_pacing", "underutilization")
                if getattr(self, k)]


def pathology_flags(costs, budget):
    """Spend anomalies of one cost sequence against its budget.

    Pacing windows are the first and last ``ceil(T / 4)`` steps.
    """
    costs = np.asarray(getattr(costs, "costs", costs), dtype=np.float64)
    T = len(costs)
    if T == 0:
        raise DomainError("empty cost sequence")
    q = math.ceil(T / 4)
    return PathologyFlags(
        excessive_step_spend=bool(np.any(costs > 0.10 * budget)),
        forward_pacing=bool(costs[:q].sum() > 0.40 * budget),
        backward_pacing=bool(costs[-q:].sum() > 0.40 * budget),
        underutilization=bool(costs.sum() < 0.90 * budget),
    )


@dataclass
class EpisodeMetrics:
    gmv: float
    buy_cnt: int
    cost: float
    roi: float
    roi_undefined: bool
    online_rate: float
    cost_rate: float
    flags: PathologyFlags

    def row(self):
        return {
            "gmv": self.gmv,
            "buy_cnt": self.buy_cnt,
            "cost": self.cost,
            "roi": self.roi,
            "online_rate": self.online_rate,
            "cost_rate": self.cost_rate,
            "bad_case": int(self.flags.any),
        }


def online_rate(costs, budget, exhaust_tol=0.01):
    """Share of the horizon elapsed when the budget ran out (1 if it never did).

    The budget counts as exhausted once the remainder drops to
    ``exhaust_tol * budget``; with ``exhaust_tol = 0`` only an exact zero counts.
    """
    costs = np.asarray(costs, dtype=np.float64)
    T = len(costs)
    remaining = budget - np.cumsum(costs)
    hit = np.flatnonzero(remaining <= exhaust_tol * budget)
    return (hit[0] + 1) / T if len(hit) else 1.0


def episode_metrics(traj, budget=None, exhaust_tol=0.01):
    budget = traj.budget if budget is None else budget
    cost = float(np.sum(traj.costs))
    gmv = float(np.sum(traj.rewards))
    undefined = cost == 0
    return EpisodeMetrics(
        gmv=gmv,
        buy_cnt=int(np.sum(traj.buy_counts)),
        cost=cost,
        roi=0.0 if undefined else gmv / cost,
        roi_undefined=undefined,
        online_rate=float(online_rate(traj.costs, budget, exhaust_tol)),
        cost_rate=cost / budget if budget > 0 else 0.0,
        flags=pathology_flags(traj.costs, budget),
    )


def bad_case_rate(trajectories):
    """Fraction of trajectories raising at least one pathology flag."""
    if not trajectories:
        return 0.0
    return float(np.mean([pathology_flags(t.costs, t.budget).any for t in trajectories]))


@dataclass
class LipschitzReport:
    y_lipschitz_hat: float
    dataset_lipschitz_hat: float
    planner_lipschitz_hat: float
    planner_violation_rate: float
    evaluator_l_hat: float
    evaluator_k_hat: float
    evaluator_violation_rate: float

    def row(self):
        return dict(self.__dict__)
