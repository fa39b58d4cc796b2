"""Autoregressive conditional Gaussian planner over budget-normalized costs.

At step ``t`` the mean network reads a causal context built from the realized
prefix ``c_1..c_{t-1}`` (the last ``window`` costs and the cumulative spend),
the elapsed time, the normalized condition ``y / y_m`` and the advertiser
feature. The next cost is ``mu + sigma * eta`` with a fixed ``sigma``.
Inside the network, per-step costs (window inputs and the mean output) are in
pace units ``c * T``, where a uniform spend of the whole budget is 1.

Conditions are passed in raw quality units. Lipschitz quantities are measured
in normalized cost per unit of ``y / y_m``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import gradcore
from .errors import DomainError, NonFiniteError

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class PlannerModel:
    def __init__(self, T, feature_dim, y_m, sigma=0.01, window=8, hidden=(64, 64), cumulative=True, rng=None):
        if sigma <= 0:
            raise DomainError("sigma must be positive")
        self.T = int(T)
        self.feature_dim = int(feature_dim)
        self.y_m = float(y_m) if y_m > 0 else 1.0
        self.sigma = float(sigma)
        self.window = int(window)
        self.cumulative = bool(cumulative)
        self.net = gradcore.MLP([self.context_dim, *hidden, 1])
        if rng is not None:
            self.net.init(rng)

    @property
    def context_dim(self):
        return self.window + int(self.cumulative) + 2 + self.feature_dim

    # column offsets inside a context row
    @property
    def _cum_col(self):
        return self.window

    @property
    def _cond_col(self):
        return self.window + int(self.cumulative) + 1

    def copy(self):
        other = PlannerModel.__new__(PlannerModel)
        other.__dict__.update(self.__dict__)
        other.net = gradcore.MLP(self.net.sizes, self.net.activation)
        other.net.params.values[:] = self.net.params.values
        return other

    def meta(self):
        return {
            "T": self.T,
            "feature_dim": self.feature_dim,
            "y_m": self.y_m,
            "sigma": self.sigma,
            "window": self.window,
            "cumulative": self.cumulative,
        }

    def save(self, path, extra=None):
        return gradcore.save_params(path, {"planner": self.net}, {**self.meta(), **(extra or {})})

    @classmethod
    def load(cls, path):
        nets, meta = gradcore.load_params(path)
        model = cls(meta["T"], meta["feature_dim"], meta["y_m"], meta["sigma"], meta["window"], (1,), meta["cumulative"])
        model.net = nets["planner"]
        return model

    # -- context construction -------------------------------------------------

    def _broadcast(self, y, features, n):
        u = np.broadcast_to(np.asarray(y, dtype=np.float64).reshape(-1), (n,)) / self.y_m
        if self.feature_dim:
            feats = np.broadcast_to(np.asarray(features, dtype=np.float64), (n, self.feature_dim))
        else:
            feats = np.zeros((n, 0))
        return u, feats

    def step_context(self, costs, t, u, feats):
        """Context rows for 0-based step ``t``; only ``costs[:, :t]`` is read."""
        n = costs.shape[0]
        X = np.zeros((n, self.context_dim))
        for k in range(1, self.window + 1):
            if t - k >= 0:
                X[:, k - 1] = costs[:, t - k] * self.T
        if self.cumulative:
            X[:, self._cum_col] = costs[:, :t].sum(axis=1)
        X[:, self._cond_col - 1] = t / self.T
        X[:, self._cond_col] = u
        X[:, self._cond_col + 1 :] = feats
        return X

    def teacher_contexts(self, costs, u, feats):
        """Contexts of every step of fully known sequences, shape ``(n * T, d)``."""
        costs = np.asarray(costs, dtype=np.float64)
        n, T = costs.shape
        X = np.zeros((n, T, self.context_dim))
        for k in range(1, self.window + 1):
            X[:, k:, k - 1] = costs[:, : T - k] * self.T
        if self.cumulative:
            X[:, 1:, self._cum_col] = np.cumsum(costs, axis=1)[:, :-1]
        X[:, :, self._cond_col - 1] = np.arange(T) / self.T
        X[:, :, self._cond_col] = u[:, None]
        X[:, :, self._cond_col + 1 :] = feats[:, None, :]
        return X.reshape(n * T, self.context_dim)

    def means(self, costs, y, features):
        """Teacher-forced means ``mu_t`` for known cost sequences, shape ``(n, T)``."""
        costs = np.atleast_2d(np.asarray(costs, dtype=np.float64))
        self._check_T(costs)
        u, feats = self._broadcast(y, features, costs.shape[0])
        return self.net.forward(self.teacher_contexts(costs, u, feats))[:, 0].reshape(costs.shape) / self.T

    def next_cost(self, history, y, features=()):
        return next_cost(self, history, y, features)

    def _check_T(self, costs):
        if costs.shape[1] != self.T:
            raise DomainError(f"expected {self.T} steps, got {costs.shape[1]}")


def _as_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return (a[None, :], True) if a.ndim == 1 else (a, False)


def rollout(model: PlannerModel, y, features, noise, history=None, keep_cache=False):
    """Generate ``c_t = mu_t + sigma * eta_t`` for the steps after ``history``.

    ``noise`` has one row per sequence covering the remaining steps. Returns
    ``(costs, caches)`` with full-length cost rows; ``caches`` holds the
    per-step network caches when ``keep_cache`` is set.
    """
    noise, _ = _as_rows(noise)
    n = noise.shape[0]
    h = 0
    costs = np.zeros((n, model.T))
    if history is not None:
        hist, _ = _as_rows(history)
        h = hist.shape[1]
        if h > model.T:
            raise DomainError(f"history of length {h} exceeds horizon {model.T}")
        costs[:, :h] = hist
    if noise.shape[1] < model.T - h:
        raise DomainError(f"noise covers {noise.shape[1]} steps, {model.T - h} needed")
    u, feats = model._broadcast(y, features, n)
    caches = []
    for t in range(h, model.T):
        X = model.step_context(costs, t, u, feats)
        out, cache = model.net.forward_cached(X)
        costs[:, t] = out[:, 0] / model.T + model.sigma * noise[:, t - h]
        if keep_cache:
            caches.append(cache)
    return costs, caches


def generate(model: PlannerModel, y, noise, features=(), history=None):
    """Reparameterized sample of the full normalized cost sequence."""
    single = np.asarray(noise).ndim == 1
    costs, _ = rollout(model, y, features, noise, history)
    return costs[0] if single else costs


def next_cost(model: PlannerModel, history, y, features=()):
    """Mean of the next cost given a realized prefix (zero-noise plan)."""
    history = np.asarray(history, dtype=np.float64)
    t = len(history)
    if t >= model.T:
        raise DomainError("history already covers the horizon")
    costs = np.zeros((1, model.T))
    costs[0, :t] = history
    u, feats = model._broadcast(y, features, 1)
    return float(model.net.forward(model.step_context(costs, t, u, feats))[0, 0]) / model.T


def log_prob(model: PlannerModel, costs, y, features=()):
    """Sum over steps of the Gaussian log-density of each cost given its prefix."""
    if model.sigma <= 0:
        raise DomainError("sigma must be positive")
    costs, single = _as_rows(costs)
    model._check_T(costs)
    mu = model.means(costs, y, features)
    z = (costs - mu) / model.sigma
    lp = np.sum(-0.5 * z * z - math.log(model.sigma) - LOG_SQRT_2PI, axis=1)
    return float(lp[0]) if single else lp


def _weighted_logprob_grad(model, costs, u, feats, weights):
    """``sum_n weights[n] * grad log p(costs[n] | y_n)`` and the per-row log-probs."""
    n, T = costs.shape
    X = model.teacher_contexts(costs, u, feats)
    out, cache = model.net.forward_cached(X)
    mu = out[:, 0].reshape(n, T) / model.T
    resid = costs - mu
    lp = np.sum(-0.5 * (resid / model.sigma) ** 2 - math.log(model.sigma) - LOG_SQRT_2PI, axis=1)
    up = (weights[:, None] * resid / (model.sigma**2 * model.T)).reshape(-1, 1)
    grad, _ = model.net.backward_cached(cache, up)
    return grad, lp


def log_prob_grad(model, costs, y, features=()):
    costs, _ = _as_rows(costs)
    u, feats = model._broadcast(y, features, costs.shape[0])
    grad, _ = _weighted_logprob_grad(model, costs, u, feats, np.ones(costs.shape[0]))
    return grad


def bc_loss(model: PlannerModel, costs, y, features=()):
    """Conditional behavior cloning: mean negative log-likelihood and its gradient."""
    costs, _ = _as_rows(costs)
    if costs.shape[0] == 0:
        raise DomainError("empty behavior-cloning batch")
    model._check_T(costs)
    n = costs.shape[0]
    u, feats = model._broadcast(y, features, n)
    grad, lp = _weighted_logprob_grad(model, costs, u, feats, np.full(n, -1.0 / n))
    return float(-lp.mean()), grad


def score_gradient(model, evaluator, y_star, features, budgets, rng, baseline=0.0):
    """REINFORCE estimate of the gradient of the mean evaluator score at ``y_star``.

    One rollout per row of ``features``/``budgets``. ``baseline`` (scalar or one
    value per row) must not depend on the current rollouts. Returns
    ``(L_estimate, grad, scores)`` where ``grad`` is an ascent direction.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = features.shape[0]
    if n < 1:
        raise DomainError("need at least one rollout")
    eta = rng.standard_normal((n, model.T))
    costs, _ = rollout(model, y_star, features, eta)
    scores = np.asarray(evaluator.score_sequences(costs, features, budgets), dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("evaluator returned a non-finite score")
    adv = scores - np.broadcast_to(np.asarray(baseline, dtype=np.float64), scores.shape)
    u, feats = model._broadcast(y_star, features, n)
    grad, _ = _weighted_logprob_grad(model, costs, u, feats, adv / n)
    return float(scores.mean()), grad, scores


def _coupled_costs(model, y1, y2, features, eta):
    costs1, _ = rollout(model, y1, features, eta)
    costs2, _ = rollout(model, y2, features, eta)
    return costs1, costs2


def sync_coupled_w1(model, y1, y2, n_noise, rng, features=(), return_se=False):
    """Transport cost of the synchronous coupling: both rollouts share every noise draw.

    Mean over ``n_noise`` draws of ``sum_t |c1_t - c2_t|``; an upper bound on the
    1-Wasserstein distance between the two conditional sequence laws.
    """
    if n_noise < 1:
        raise DomainError("n_noise must be >= 1")
    eta = rng.standard_normal((n_noise, model.T))
    c1, c2 = _coupled_costs(model, y1, y2, features, eta)
    d = np.abs(c1 - c2).sum(axis=1)
    if return_se:
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n_noise)) if n_noise > 1 else 0.0
    return float(d.mean())


def independent_coupled_w1(model, y1, y2, n_noise, rng, features=(), return_se=False):
    """Same transport cost under the product coupling (independent noise)."""
    eta1 = rng.standard_normal((n_noise, model.T))
    eta2 = rng.standard_normal((n_noise, model.T))
    c1, _ = rollout(model, y1, features, eta1)
    c2, _ = rollout(model, y2, features, eta2)
    d = np.abs(c1 - c2).sum(axis=1)
    if return_se:
        return float(d.mean()), float(d.std(ddof=1) / math.sqrt(n_noise)) if n_noise > 1 else 0.0
    return float(d.mean())


def coupled_w1_grad(model, y, features, eta, weights):
    """Backpropagate ``sum_pairs weights * sum_t |c1_t - c2_t|`` through both rollouts.

    ``y`` is ``(m, 2)`` (one condition pair per row), ``features`` ``(m, dx)``,
    ``eta`` ``(m, T)`` shared by both members of a pair. Returns
    ``(per_row_distance, grad)``.
    """
    y = np.asarray(y, dtype=np.float64)
    m = y.shape[0]
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64)).reshape(m, model.feature_dim)
    cond = np.concatenate([y[:, 0], y[:, 1]])
    F = np.vstack([feats, feats])
    E = np.vstack([eta, eta])
    costs, caches = rollout(model, cond, F, E, keep_cache=True)
    diff = costs[:m] - costs[m:]
    dist = np.abs(diff).sum(axis=1)
    s = np.sign(diff) * np.asarray(weights, dtype=np.float64)[:, None]
    g_c = np.vstack([s, -s])
    grad = np.zeros_like(model.net.params.values)
    acc = np.zeros(2 * m)
    W = model.window
    for t in range(model.T - 1, -1, -1):
        g_c[:, t] += acc
        pg, ig = model.net.backward_cached(caches[t], g_c[:, t : t + 1] / model.T)
        grad += pg
        if model.cumulative:
            acc += ig[:, model._cum_col]
        for k in range(1, W + 1):
            if t - k >= 0:
                g_c[:, t - k] += ig[:, k - 1] * model.T
    return dist, grad


def lipschitz_penalty(model, conditions, features, L_p, n_pairs, n_noise, rng, y_star=None,
                      local_frac=0.0, local_scale=0.02):
    """Hinge on the coupled transport cost exceeding ``L_p * |y1 - y2| / y_m``.

    ``conditions``/``features`` form the pool (one row per dataset trajectory).
    When ``y_star`` is given, half of the sampled pairs pair it with a pool
    condition. ``y_star`` is a scalar or one target per pool row. A further
    ``local_frac`` of the pairs probe the local slope: the second condition is
    the first shifted by ``U(-local_scale, local_scale) * y_m``. Returns
    ``(penalty, grad)``.
    """
    conditions = np.asarray(conditions, dtype=np.float64)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64)).reshape(len(conditions), model.feature_dim)
    if len(np.unique(conditions)) < 2 and y_star is None:
        raise DomainError("the condition pool needs at least two distinct values")
    i = rng.integers(0, len(conditions), size=n_pairs)
    j = rng.integers(0, len(conditions), size=n_pairs)
    y1 = conditions[i]
    y2 = conditions[j].copy()
    if y_star is not None:
        half = (n_pairs + 1) // 2
        y_star = np.broadcast_to(np.asarray(y_star, dtype=np.float64), (len(conditions),))
        y2[:half] = y_star[i[:half]]
    else:
        half = 0
    n_local = min(int(round(local_frac * n_pairs)), n_pairs - half)
    if n_local > 0:
        loc = slice(half, half + n_local)
        shift = rng.uniform(-local_scale, local_scale, size=n_local) * model.y_m
        y2[loc] = np.maximum(y1[loc] + shift, 0.0)
    feats = features[i]
    # one row per (pair, noise draw)
    Y = np.repeat(np.stack([y1, y2], axis=1), n_noise, axis=0)
    F = np.repeat(feats, n_noise, axis=0)
    eta = rng.standard_normal((n_pairs * n_noise, model.T))
    dist, _ = _coupled_dist(model, Y, F, eta)
    w_hat = dist.reshape(n_pairs, n_noise).mean(axis=1)
    gap = w_hat - L_p * np.abs(y1 - y2) / model.y_m
    active = gap > 0
    penalty = float(np.mean(np.where(active, gap, 0.0)))
    if not np.any(active):
        return penalty, np.zeros_like(model.net.params.values)
    weights = np.repeat(active / (n_pairs * n_noise), n_noise)
    keep = weights > 0
    _, grad = coupled_w1_grad(model, Y[keep], F[keep], eta[keep], weights[keep])
    return penalty, grad


def _coupled_dist(model, Y, F, eta):
    cond = np.concatenate([Y[:, 0], Y[:, 1]])
    costs, _ = rollout(model, cond, np.vstack([F, F]), np.vstack([eta, eta]))
    m = Y.shape[0]
    return np.abs(costs[:m] - costs[m:]).sum(axis=1), costs


@dataclass
class PlannerTrainConfig:
    beta2: float = 0.05
    beta3: float = 1.0
    L_p: float = 10.0
    epsilon: float = 0.05
    score_weight: float = 1.0
    n_rollouts: int = 256
    bc_batch: int = 64
    n_pairs: int = 16
    n_noise: int = 4
    local_frac: float = 0.0
    local_scale: float = 0.02
    baseline_decay: float = 0.99
    lr: float = 3e-4
    steps: int = 1000
    pretrain_steps: int = 2000
    pretrain_lr: float = 1e-3
    eval_every: int = 50
    max_grad_norm: float | None = 5.0

    def __post_init__(self):
        if self.beta2 < 0 or self.beta3 < 0:
            raise DomainError("beta2 and beta3 must be non-negative")
        if self.L_p <= 0:
            raise DomainError("L_p must be positive")
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")

    def y_star(self, y_m):
        return (1.0 + self.epsilon) * np.asarray(y_m, dtype=np.float64)


def feasible_costs(norm_costs):
    """Project budget-normalized costs onto what the auction can realize.

    Steps are clipped at zero and cumulative spend at the budget, as the
    environment suspends bidding once the budget is gone.
    """
    c = np.maximum(np.asarray(norm_costs, dtype=np.float64), 0.0)
    cum = np.minimum(np.cumsum(c, axis=-1), 1.0)
    return np.diff(cum, axis=-1, prepend=0.0)


class FeasibleScore:
    """Evaluator view that scores the feasible projection of each sequence."""

    def __init__(self, evaluator):
        self.evaluator = evaluator

    def score_sequences(self, norm_costs, features, budgets):
        return self.evaluator.score_sequences(feasible_costs(norm_costs), features, budgets)


class ConditionTarget:
    """Per-advertiser quality ceiling used to place the inference condition.

    Known advertisers get the best quality observed for them; an unseen one
    gets the inverse-distance average over its ``k`` nearest known features.
    """

    def __init__(self, features, ceilings, k=3):
        self.features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.ceilings = np.asarray(ceilings, dtype=np.float64)
        if len(self.features) != len(self.ceilings) or len(self.ceilings) == 0:
            raise DomainError("need one ceiling per known advertiser feature")
        self.k = int(k)

    @classmethod
    def from_dataset(cls, dataset, k=3):
        arrs = dataset.arrays
        prof = arrs["profile_index"]
        n = int(prof.max()) + 1
        feats = np.array([arrs["features"][np.flatnonzero(prof == p)[0]] for p in range(n)])
        ceil = np.array([arrs["qualities"][prof == p].max() for p in range(n)])
        return cls(feats, ceil, k)

    def __call__(self, features):
        F = np.atleast_2d(np.asarray(features, dtype=np.float64))
        d = np.linalg.norm(F[:, None, :] - self.features[None, :, :], axis=-1)
        out = np.empty(len(F))
        k = min(self.k, len(self.ceilings))
        for r in range(len(F)):
            near = np.argsort(d[r], kind="stable")[:k]
            if d[r, near[0]] < 1e-12:
                out[r] = self.ceilings[near[0]]
            else:
                w = 1.0 / d[r, near]
                out[r] = float(w @ self.ceilings[near] / w.sum())
        return out

    def state(self):
        return {"features": self.features.tolist(), "ceilings": self.ceilings.tolist(), "k": self.k}

    @classmethod
    def from_state(cls, st):
        return cls(st["features"], st["ceilings"], st["k"])


def _bc_rows(dataset, n, rng):
    arrs = dataset.arrays
    idx = rng.integers(0, len(dataset), size=n)
    return arrs["norm_costs"][idx], arrs["qualities"][idx], arrs["features"][idx]


def pretrain_bc(model, dataset, steps, rng, lr=1e-3, batch=64, log=None):
    """Warm start by conditional behavior cloning on the offline dataset."""
    opt = gradcore.Adam(lr=lr)
    for step in range(steps):
        c, y, f = _bc_rows(dataset, batch, rng)
        nll, grad = bc_loss(model, c, y, f)
        if not math.isfinite(nll):
            raise NonFiniteError(f"behavior-cloning loss became {nll} at step {step}")
        opt.step(model.net.params, grad)
        if log is not None:
            log.append({"step": step, "bc_nll": nll})
    return model


@dataclass
class PlannerLossParts:
    L_estimate: float
    bc_nll: float
    lipschitz_penalty: float
    grad_norm: float = 0.0


class ScoreBaseline:
    """Per-advertiser exponential moving average of evaluator scores."""

    def __init__(self, decay=0.99):
        self.decay = decay
        self.values = {}

    def __call__(self, keys):
        return np.array([self.values.get(k, np.nan) for k in keys])

    def update(self, keys, scores):
        sums = {}
        for k, s in zip(keys, scores):
            sums.setdefault(k, []).append(s)
        for k, ss in sums.items():
            m = float(np.mean(ss))
            old = self.values.get(k)
            self.values[k] = m if old is None else self.decay * old + (1 - self.decay) * m


def row_targets(dataset, config: PlannerTrainConfig):
    """Training condition ``(1 + epsilon) * ceiling`` for every dataset row."""
    target = ConditionTarget.from_dataset(dataset)
    return config.y_star(target(dataset.arrays["features"]))


def planner_loss(model, evaluator, dataset, config: PlannerTrainConfig, rng, baseline=None, y_star=None):
    """Components of the regularized planner objective and the descent direction.

    The minimized objective is ``-score_weight * L / y_m + beta2 * NLL + beta3 * penalty``.
    ``y_star`` holds one condition per dataset row (default: :func:`row_targets`).
    Returns ``(parts, grad)``.
    """
    arrs = dataset.arrays
    y_m = dataset.y_m if dataset.y_m > 0 else 1.0
    if y_star is None:
        y_star = row_targets(dataset, config)
    y_star = np.broadcast_to(np.asarray(y_star, dtype=np.float64), (len(dataset),))
    grad = np.zeros_like(model.net.params.values)
    L_est = bc = pen = 0.0
    # one stream per term, so switching a term off leaves the others' draws intact
    rng_score, rng_bc, rng_pen = rng.spawn(3)
    if config.score_weight > 0:
        rows = rng_score.integers(0, len(dataset), size=config.n_rollouts)
        keys = arrs["profile_index"][rows]
        base = np.zeros(len(rows))
        if baseline is not None:
            base = baseline(keys)
        L_est, g, scores = _score_step(model, evaluator, y_star[rows], arrs, rows, base, rng_score)
        if baseline is not None:
            baseline.update(keys, scores)
        grad -= config.score_weight * g / y_m
    else:
        L_est = float("nan")
    if config.beta2 > 0:
        c, y, f = _bc_rows(dataset, config.bc_batch, rng_bc)
        bc, g = bc_loss(model, c, y, f)
        grad += config.beta2 * g
    if config.beta3 > 0:
        pen, g = lipschitz_penalty(
            model, arrs["qualities"], arrs["features"], config.L_p, config.n_pairs, config.n_noise, rng_pen, y_star,
            config.local_frac, config.local_scale,
        )
        grad += config.beta3 * g
    parts = PlannerLossParts(L_est, bc, pen, float(np.linalg.norm(grad)))
    for name in ("bc_nll", "lipschitz_penalty", "grad_norm"):
        if not math.isfinite(getattr(parts, name)):
            raise NonFiniteError(f"planner loss component {name} is {getattr(parts, name)}")
    if config.score_weight > 0 and not math.isfinite(L_est):
        raise NonFiniteError(f"planner loss component L_estimate is {L_est}")
    return parts, grad


def _score_step(model, evaluator, y_star, arrs, rows, base, rng):
    feats = arrs["features"][rows]
    buds = arrs["budgets"][rows]
    # the first visit of an advertiser has no baseline yet: use 0 for that row
    base = np.where(np.isnan(base), 0.0, base)
    L_est, g, scores = score_gradient(model, evaluator, y_star, feats, buds, rng, base)
    return L_est, g, scores


def validation_score(model, evaluator, dataset, y_star, seed=0, n=128):
    """Mean evaluator score at ``y_star`` on a fixed set of rows and noise."""
    rng = np.random.default_rng(seed)
    arrs = dataset.arrays
    rows = rng.integers(0, len(dataset), size=n)
    eta = rng.standard_normal((n, model.T))
    y_star = np.broadcast_to(np.asarray(y_star, dtype=np.float64), (len(dataset),))
    costs, _ = rollout(model, y_star[rows], arrs["features"][rows], eta)
    return float(np.mean(evaluator.score_sequences(costs, arrs["features"][rows], arrs["budgets"][rows])))


def train_planner(model, evaluator, dataset, config: PlannerTrainConfig, rng, log_path=None):
    """Score maximization from a warm-started planner with a frozen evaluator.

    Returns ``(model, logs)``. On a non-finite step the best parameters seen at
    a validation checkpoint are restored and the error is re-raised. Samples
    are scored on their feasible projection (see :func:`feasible_costs`).
    """
    y_star = row_targets(dataset, config)
    evaluator = FeasibleScore(evaluator)
    opt = gradcore.Adam(lr=config.lr, max_grad_norm=config.max_grad_norm)
    baseline = ScoreBaseline(config.baseline_decay)
    logs = []
    best = (validation_score(model, evaluator, dataset, y_star), model.net.params.values.copy())
    for step in range(config.steps):
        try:
            parts, grad = planner_loss(model, evaluator, dataset, config, rng, baseline, y_star)
            opt.step(model.net.params, grad)
        except NonFiniteError:
            model.net.params.values[:] = best[1]
            raise
        row = {"step": step, **asdict(parts)}
        if config.eval_every and (step + 1) % config.eval_every == 0:
            val = validation_score(model, evaluator, dataset, y_star)
            row["val_L"] = val
            if val > best[0]:
                best = (val, model.net.params.values.copy())
        logs.append(row)
    if log_path is not None:
        write_log(log_path, logs)
    return model, logs


def write_log(path, logs, header_lines=()):
    fields = ["step", "L_estimate", "bc_nll", "lipschitz_penalty", "grad_norm"]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for row in logs:
            w.writerow(row)
