"""Learned trajectory score with a hinge penalty on its Lipschitz constant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore
from .data import OfflineDataset, perturb_costs, sample_pair_indices
from .errors import DomainError, NonFiniteError


class EvaluatorModel:
    """Maps a budget-normalized cost sequence, feature and budget to a quality score.

    The network predicts ``quality / y_m``; :meth:`score` rescales.
    """

    def __init__(self, T, feature_dim, y_m, r_max, budget_scale, hidden=(64, 64), rng=None):
        self.T = int(T)
        self.feature_dim = int(feature_dim)
        self.y_m = float(y_m) if y_m > 0 else 1.0
        self.r_max = float(r_max)
        self.budget_scale = float(budget_scale)
        self.net = gradcore.MLP([self.T + self.feature_dim + 1, *hidden, 1])
        if rng is not None:
            self.net.init(rng)

    @property
    def lipschitz_budget(self):
        return math.sqrt(self.T) * self.r_max

    def inputs(self, norm_costs, features, budgets):
        norm_costs = np.atleast_2d(np.asarray(norm_costs, dtype=np.float64))
        n = norm_costs.shape[0]
        features = np.broadcast_to(np.asarray(features, dtype=np.float64), (n, self.feature_dim))
        budgets = np.broadcast_to(np.asarray(budgets, dtype=np.float64).reshape(-1), (n,))
        if norm_costs.shape[1] != self.T:
            raise DomainError(f"expected {self.T} cost steps, got {norm_costs.shape[1]}")
        return np.hstack([norm_costs, features, budgets[:, None] / self.budget_scale])

    def score_sequences(self, norm_costs, features, budgets):
        """Raw-unit scores for a batch of budget-normalized cost sequences."""
        return self.y_m * self.net.forward(self.inputs(norm_costs, features, budgets))[:, 0]

    def meta(self):
        return {
            "T": self.T,
            "feature_dim": self.feature_dim,
            "y_m": self.y_m,
            "r_max": self.r_max,
            "budget_scale": self.budget_scale,
        }

    def save(self, path, extra=None):
        return gradcore.save_params(path, {"evaluator": self.net}, {**self.meta(), **(extra or {})})

    @classmethod
    def load(cls, path):
        nets, meta = gradcore.load_params(path)
        model = cls(meta["T"], meta["feature_dim"], meta["y_m"], meta["r_max"], meta["budget_scale"])
        model.net = nets["evaluator"]
        return model


def score(model: EvaluatorModel, traj):
    if traj.T != model.T or len(traj.feature) != model.feature_dim:
        raise DomainError("trajectory shape does not match the evaluator")
    b = traj.budget if traj.budget > 0 else 1.0
    return float(model.score_sequences(traj.costs / b, traj.feature, traj.budget)[0])


@dataclass
class EvaluatorReport:
    train_mse: float
    delta_d: float
    l_hat: float
    k_hat: float
    pair_violation_rate: float
    steps: int

    def row(self):
        return {
            "train_mse": self.train_mse,
            "delta_d": self.delta_d,
            "l_hat": self.l_hat,
            "k_hat": self.k_hat,
            "pair_violation_rate": self.pair_violation_rate,
            "steps": self.steps,
        }


def loss_arrays(model, labeled, pairs, beta1):
    """Loss and gradient on array batches.

    ``labeled`` is ``(norm_costs, features, budgets, qualities)``; ``pairs`` is
    ``(norm_costs_1, norm_costs_2, features, budgets)`` with both sides of a pair
    sharing feature and budget. Returns ``(loss, grad, mse, penalty)``.
    """
    nc, feat, bud, y = labeled
    n_lab = 0 if nc is None else len(nc)
    blocks = []
    if n_lab:
        blocks.append(model.inputs(nc, feat, bud))
    n_pair = 0
    if pairs is not None and beta1 > 0:
        p1, p2, pf, pb = pairs
        n_pair = len(p1)
        blocks += [model.inputs(p1, pf, pb), model.inputs(p2, pf, pb)]
    if not blocks:
        raise DomainError("empty evaluator batch")
    X = np.vstack(blocks)
    out, cache = model.net.forward_cached(X)
    out = out[:, 0]
    up = np.zeros_like(out)
    mse = 0.0
    if n_lab:
        resid = out[:n_lab] - np.asarray(y, dtype=np.float64) / model.y_m
        mse = float(np.mean(resid**2))
        up[:n_lab] = 2.0 * resid / n_lab
    penalty = 0.0
    if n_pair:
        o1 = out[n_lab : n_lab + n_pair]
        o2 = out[n_lab + n_pair :]
        dist = np.asarray(pb, dtype=np.float64).reshape(-1) * np.linalg.norm(p1 - p2, axis=1)
        gap = np.abs(o1 - o2) - model.lipschitz_budget * dist / model.y_m
        active = gap > 0
        penalty = float(np.mean(np.where(active, gap, 0.0)))
        s = beta1 * np.sign(o1 - o2) * active / n_pair
        up[n_lab : n_lab + n_pair] = s
        up[n_lab + n_pair :] = -s
    grad, _ = model.net.backward_cached(cache, up[:, None])
    return mse + beta1 * penalty, grad, mse, penalty


def evaluator_loss(model, labeled, pairs, beta1):
    """Squared error on labeled trajectories plus ``beta1`` times the pair hinge.

    Values are in ``y_m``-normalized units. Returns ``(loss, grad)``.
    """
    if beta1 < 0:
        raise DomainError("beta1 must be non-negative")
    if not labeled and not pairs:
        raise DomainError("empty evaluator batch")
    lab = (None, None, None, None)
    if labeled:
        lab = (
            np.array([t.costs / t.budget for t in labeled]),
            np.array([t.feature for t in labeled]),
            np.array([t.budget for t in labeled]),
            np.array([t.quality for t in labeled]),
        )
    pr = None
    if pairs:
        for a, b in pairs:
            if a.budget != b.budget or not np.array_equal(a.feature, b.feature):
                raise DomainError("pair members must share advertiser feature and budget")
        pr = (
            np.array([a.costs / a.budget for a, _ in pairs]),
            np.array([b.costs / b.budget for _, b in pairs]),
            np.array([a.feature for a, _ in pairs]),
            np.array([a.budget for a, _ in pairs]),
        )
    loss, grad, _, _ = loss_arrays(model, lab, pr, beta1)
    return loss, grad


@dataclass
class EvaluatorConfig:
    steps: int = 10000
    batch_size: int = 64
    n_pairs: int = 64
    beta1: float = 10.0
    lr: float = 3e-3
    perturb_scale: float = 0.05
    perturbed_fraction: float = 0.5
    n_check_pairs: int = 8000


def _pair_batch(arrs, dataset, n, frac_perturbed, scale, rng):
    n_pert = int(round(n * frac_perturbed))
    n_rand = n - n_pert
    nc = arrs["norm_costs"]
    try:
        i, j = sample_pair_indices(dataset, n_rand, rng)
    except DomainError:
        # no advertiser has two trajectories: probe with perturbed pairs only
        n_pert = n
        i = j = np.empty(0, dtype=np.int64)
    k = rng.integers(0, len(dataset), size=n_pert)
    base = nc[k]
    # perturb in normalized units: noise of scale/T of the budget
    twin = perturb_costs(base, np.ones(n_pert), scale, rng)
    p1 = np.vstack([nc[i], base])
    p2 = np.vstack([nc[j], twin])
    idx = np.concatenate([i, k])
    return p1, p2, arrs["features"][idx], arrs["budgets"][idx]


def train_evaluator(model, dataset: OfflineDataset, config: EvaluatorConfig, rng, checkpoint=None):
    """Minimize squared error plus Lipschitz hinge with Adam; returns ``(model, report)``."""
    if len(dataset) == 0:
        raise DomainError("cannot train an evaluator on an empty dataset")
    arrs = dataset.arrays
    opt = gradcore.Adam(lr=config.lr)
    can_pair = len(dataset) >= 2 and config.beta1 > 0
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        lab = (arrs["norm_costs"][idx], arrs["features"][idx], arrs["budgets"][idx], arrs["qualities"][idx])
        pairs = None
        if can_pair:
            pairs = _pair_batch(arrs, dataset, config.n_pairs, config.perturbed_fraction, config.perturb_scale, rng)
        loss, grad, _, _ = loss_arrays(model, lab, pairs, config.beta1)
        if not math.isfinite(loss):
            if checkpoint is not None:
                model.save(checkpoint, {"diverged_at_step": step})
            raise NonFiniteError(f"evaluator loss became {loss} at step {step}")
        opt.step(model.net.params, grad)
    pred = model.score_sequences(arrs["norm_costs"], arrs["features"], arrs["budgets"])
    mse = float(np.mean((pred - arrs["qualities"]) ** 2))
    l_hat = k_hat = rate = 0.0
    if len(dataset) >= 2:
        est = estimate_lipschitz(model, dataset, config.n_check_pairs, rng)
        l_hat, k_hat, rate = est.l_hat, est.k_hat, est.violation_rate
    return model, EvaluatorReport(mse, math.sqrt(mse), l_hat, k_hat, rate, config.steps)


@dataclass
class LipschitzEstimate:
    l_hat: float
    k_hat: float
    violation_rate: float
    bound: float
    distance: np.ndarray
    delta: np.ndarray

    @property
    def ratio(self):
        return self.delta / self.distance

    @property
    def violated(self):
        return self.ratio > self.bound


def estimate_lipschitz(model, dataset, n_pairs=8000, rng=None, mode="random"):
    """Largest score-difference to cost-distance ratio over sampled same-advertiser pairs.

    Pairs at zero distance are skipped. Returns a :class:`LipschitzEstimate`
    whose ``k_hat`` is ``l_hat`` divided by the Lipschitz budget.
    """
    if n_pairs < 2:
        raise DomainError("n_pairs must be >= 2")
    rng = np.random.default_rng() if rng is None else rng
    arrs = dataset.arrays
    if mode == "random":
        i, j = sample_pair_indices(dataset, n_pairs, rng)
        c1, c2 = arrs["norm_costs"][i], arrs["norm_costs"][j]
    elif mode == "perturbed":
        i = rng.integers(0, len(dataset), size=n_pairs)
        c1 = arrs["norm_costs"][i]
        c2 = perturb_costs(c1, np.ones(n_pairs), 0.05, rng)
    else:
        raise DomainError(f"unknown pair mode {mode!r}")
    feat, bud = arrs["features"][i], arrs["budgets"][i]
    s1 = model.score_sequences(c1, feat, bud)
    s2 = model.score_sequences(c2, feat, bud)
    dist = bud * np.linalg.norm(c1 - c2, axis=1)
    keep = dist > 0
    if not np.any(keep):
        raise DomainError("every sampled pair has zero distance")
    dist, delta = dist[keep], np.abs(s1 - s2)[keep]
    ratio = delta / dist
    bound = model.lipschitz_budget
    l_hat = float(ratio.max())
    return LipschitzEstimate(l_hat, l_hat / bound, float(np.mean(ratio > bound)), bound, dist, delta)
