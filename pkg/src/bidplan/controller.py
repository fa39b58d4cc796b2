"""Inverse-dynamics controller turning a planned next cost into a bid factor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore
from .errors import DomainError, NonFiniteError


class InverseDynamicsModel:
    """``softplus(net(t/T, c_prev/B, c_plan/B, remaining/B, x))``; never negative."""

    def __init__(self, T, feature_dim, hidden=(64, 64), rng=None):
        self.T = int(T)
        self.feature_dim = int(feature_dim)
        self.net = gradcore.MLP([4 + self.feature_dim, *hidden, 1])
        self.holdout_mse = float("nan")
        self.holdout_var = float("nan")
        if rng is not None:
            self.net.init(rng)

    def inputs(self, t, prev_cost, planned, remaining, budget, feature):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        n = t.shape[0]
        b = np.broadcast_to(np.asarray(budget, dtype=np.float64), (n,))
        b = np.where(b > 0, b, 1.0)
        cols = [
            (t - 1) / self.T,
            np.broadcast_to(prev_cost, (n,)) / b,
            np.broadcast_to(planned, (n,)) / b,
            np.broadcast_to(remaining, (n,)) / b,
        ]
        feats = np.broadcast_to(np.asarray(feature, dtype=np.float64), (n, self.feature_dim))
        return np.column_stack([*cols, feats])

    def predict(self, X):
        return gradcore.softplus(self.net.forward(X)[:, 0])

    def act(self, state, planned_cost, budget):
        """Bid factor realizing ``planned_cost`` from ``state`` (currency units)."""
        X = self.inputs(state.t, state.prev_cost, planned_cost, state.remaining_budget, budget, state.feature)
        return float(self.predict(X)[0])

    def save(self, path, extra=None):
        meta = {"T": self.T, "feature_dim": self.feature_dim, "holdout_mse": self.holdout_mse,
                "holdout_var": self.holdout_var, **(extra or {})}
        return gradcore.save_params(path, {"controller": self.net}, meta)

    @classmethod
    def load(cls, path):
        nets, meta = gradcore.load_params(path)
        model = cls(meta["T"], meta["feature_dim"], hidden=(1,))
        model.net = nets["controller"]
        model.holdout_mse = meta.get("holdout_mse", float("nan"))
        model.holdout_var = meta.get("holdout_var", float("nan"))
        return model


def act(model: InverseDynamicsModel, state, planned_cost, budget):
    return model.act(state, planned_cost, budget)


def transition_rows(dataset, exhausted_frac=0.02):
    """``(X, actions)`` for every step whose outcome the budget did not truncate.

    Steps after which less than ``exhausted_frac`` of the budget remains are
    dropped: their cost no longer identifies the bid factor.
    """
    arrs = dataset.arrays
    costs, budgets = arrs["costs"], arrs["budgets"]
    n, T = costs.shape
    spent_after = np.cumsum(costs, axis=1)
    remaining_before = budgets[:, None] - (spent_after - costs)
    prev = np.concatenate([np.zeros((n, 1)), costs[:, :-1]], axis=1)
    keep = (budgets[:, None] - spent_after) >= exhausted_frac * budgets[:, None]
    b = np.where(budgets > 0, budgets, 1.0)[:, None]
    t = np.broadcast_to(np.arange(T), (n, T))
    X = np.stack(
        [t / T, prev / b, costs / b, remaining_before / b],
        axis=-1,
    )
    F = np.broadcast_to(arrs["features"][:, None, :], (n, T, arrs["features"].shape[1]))
    X = np.concatenate([X, F], axis=-1)
    traj = np.broadcast_to(np.arange(n)[:, None], (n, T))
    return X[keep], arrs["actions"][keep], traj[keep]


@dataclass
class ControllerConfig:
    steps: int = 8000
    batch_size: int = 256
    lr: float = 1e-3
    holdout_fraction: float = 0.1
    exhausted_frac: float = 0.02


def mse_grad(model, X, a):
    out, cache = model.net.forward_cached(X)
    z = out[:, 0]
    pred = gradcore.softplus(z)
    resid = pred - a
    up = (2.0 * resid * gradcore.sigmoid(z) / len(a))[:, None]
    grad, _ = model.net.backward_cached(cache, up)
    return float(np.mean(resid**2)), grad


def train_inverse_dynamics(dataset, rng, config: ControllerConfig | None = None, hidden=(64, 64)):
    """Fit the controller by squared action error; holdout split is by trajectory."""
    config = config or ControllerConfig()
    if len(dataset) == 0:
        raise DomainError("cannot train a controller on an empty dataset")
    X, a, traj = transition_rows(dataset, config.exhausted_frac)
    if len(a) == 0:
        raise DomainError("dataset has no usable transitions")
    n_traj = len(dataset)
    hold = rng.random(n_traj) < config.holdout_fraction
    if hold.all() or n_traj == 1:
        hold[:] = False
    is_hold = hold[traj]
    Xtr, atr = X[~is_hold], a[~is_hold]
    Xho, aho = (X[is_hold], a[is_hold]) if is_hold.any() else (Xtr, atr)
    model = InverseDynamicsModel(dataset.T, dataset.arrays["features"].shape[1], hidden, rng)
    # start the softplus head near the mean action
    mean_a = float(np.mean(atr))
    model.net.params.view(f"b{model.net.n_layers - 1}")[...] = math.log(math.expm1(max(mean_a, 1e-3)))
    opt = gradcore.Adam(lr=config.lr)
    for step in range(config.steps):
        idx = rng.integers(0, len(atr), size=min(config.batch_size, len(atr)))
        loss, grad = mse_grad(model, Xtr[idx], atr[idx])
        if not math.isfinite(loss):
            raise NonFiniteError(f"controller loss became {loss} at step {step}")
        opt.step(model.net.params, grad)
    model.holdout_mse = float(np.mean((model.predict(Xho) - aho) ** 2))
    model.holdout_var = float(np.var(aho))
    return model


def planning_policy(planner, controller, y_star, profile):
    """Environment policy replanning from realized history at every step.

    The planner proposes the next budget-normalized cost (its zero-noise mean),
    which is clipped to what the remaining budget allows before the controller
    turns it into a bid factor. Build one policy per episode.
    """
    budget = profile.budget if profile.budget > 0 else 1.0
    history = []

    def policy(state):
        if state.t == 1:
            history.clear()
        else:
            history.append(state.prev_cost / budget)
        planned = planner.next_cost(history, y_star, profile.feature)
        planned = min(max(planned, 0.0), state.remaining_budget / budget)
        return controller.act(state, planned * budget, profile.budget)

    return policy
