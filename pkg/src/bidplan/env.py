"""Budget-constrained second-price auction environment.

An advertiser bids ``action * value`` on every impression arriving between two
time steps. Impressions are won when the bid reaches the market price and the
remaining budget still covers that price; the winner pays the market price.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EpisodeAborted
from .kernels import resolve_auction


@dataclass(frozen=True)
class EnvConfig:
    T: int = 48
    n_impressions: tuple[int, int] = (50, 300)
    # relative half-width of each advertiser's own impression-count range;
    # values >= 1 give every advertiser the full ``n_impressions`` range
    count_jitter: float = 0.1
    budget_range: tuple[float, float] = (500.0, 2000.0)
    budget_levels: tuple[float, ...] = ()
    v_max: float = 1.0
    p_max: float = 1000.0
    r_max: float = 5.0
    price_log_mean_range: tuple[float, float] = (-0.7, 0.0)
    price_log_sigma: float = 0.6

    def __post_init__(self):
        lo, hi = self.n_impressions
        if not 1 <= lo <= hi:
            raise DomainError(f"invalid impression range {self.n_impressions}")
        if self.T < 1:
            raise DomainError("T must be positive")
        b_lo, b_hi = self.budget_range
        if not 0 <= b_lo <= b_hi:
            raise DomainError(f"invalid budget range {self.budget_range}")
        if self.v_max <= 0 or self.p_max <= 0 or self.r_max <= 0:
            raise DomainError("v_max, p_max and r_max must be positive")
        if self.v_max / self.p_max > self.r_max:
            raise DomainError("r_max below the smallest attainable value/price ratio")

    @property
    def lipschitz_bound(self):
        """Lipschitz constant of trajectory quality in cost space."""
        return math.sqrt(self.T) * self.r_max


@dataclass(frozen=True, eq=False)
class AdvertiserProfile:
    id: str
    budget: float
    feature: np.ndarray
    price_log_mean: float
    price_log_sigma: float
    impressions_per_step_range: tuple[int, int]
    v_max: float = 1.0


@dataclass(frozen=True, eq=False)
class BidState:
    t: int
    prev_cost: float
    feature: np.ndarray
    remaining_budget: float


@dataclass(eq=False)
class Trajectory:
    profile_id: str
    feature: np.ndarray
    budget: float
    actions: np.ndarray
    costs: np.ndarray
    rewards: np.ndarray
    buy_counts: np.ndarray
    quality: float = field(default=float("nan"))

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.costs = np.asarray(self.costs, dtype=np.float64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.buy_counts = np.asarray(self.buy_counts, dtype=np.int64)
        if math.isnan(self.quality):
            self.quality = trajectory_quality(self)

    @property
    def T(self):
        return len(self.costs)

    @property
    def states(self):
        spent = np.concatenate([[0.0], np.cumsum(self.costs)[:-1]])
        prev = np.concatenate([[0.0], self.costs[:-1]])
        return [
            BidState(t + 1, float(prev[t]), self.feature, float(self.budget - spent[t]))
            for t in range(self.T)
        ]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.profile_id == other.profile_id
            and self.budget == other.budget
            and self.quality == other.quality
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("feature", "actions", "costs", "rewards", "buy_counts")
            )
        )


def make_profiles(cfg: EnvConfig, n: int, rng: np.random.Generator, prefix="adv"):
    """Draw ``n`` advertiser profiles from the configured ranges."""
    n_lo, n_hi = cfg.n_impressions
    m_lo, m_hi = cfg.price_log_mean_range
    m_mid, m_half = 0.5 * (m_lo + m_hi), max(0.5 * (m_hi - m_lo), 1e-12)
    profiles = []
    for i in range(n):
        if cfg.budget_levels:
            budget = float(cfg.budget_levels[i % len(cfg.budget_levels)])
        else:
            budget = float(rng.uniform(*cfg.budget_range))
        mu = float(rng.uniform(m_lo, m_hi))
        if cfg.count_jitter >= 1:
            lo, hi = n_lo, n_hi
        else:
            center = rng.uniform(n_lo, n_hi)
            lo = max(n_lo, int(round(center * (1 - cfg.count_jitter))))
            hi = min(n_hi, max(lo, int(round(center * (1 + cfg.count_jitter)))))
        center = 0.5 * (lo + hi)
        feature = np.array(
            [
                budget / cfg.budget_range[1],
                (mu - m_mid) / m_half,
                (center - n_lo) / max(n_hi - n_lo, 1),
            ]
        )
        profiles.append(
            AdvertiserProfile(
                id=f"{prefix}{i:03d}",
                budget=budget,
                feature=feature,
                price_log_mean=mu,
                price_log_sigma=cfg.price_log_sigma,
                impressions_per_step_range=(lo, hi),
                v_max=cfg.v_max,
            )
        )
    return profiles


def sample_impressions(profile: AdvertiserProfile, t: int, rng: np.random.Generator, cfg: EnvConfig):
    """Draw the impressions arriving between steps ``t`` and ``t + 1``.

    Returns ``(values, prices)``. Values are uniform on ``(0, v_max]``, prices
    log-normal truncated to ``(0, p_max]``; a pair is redrawn whenever its
    value/price ratio exceeds ``r_max``.
    """
    if not 1 <= t <= cfg.T:
        raise DomainError(f"time step {t} outside [1, {cfg.T}]")
    lo, hi = profile.impressions_per_step_range
    n = int(rng.integers(lo, hi + 1))
    values = np.empty(n)
    prices = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        v = profile.v_max * (1.0 - rng.random(todo.size))
        p = np.exp(profile.price_log_mean + profile.price_log_sigma * rng.standard_normal(todo.size))
        values[todo] = v
        prices[todo] = p
        bad = (p > cfg.p_max) | (v > cfg.r_max * p)
        todo = todo[bad]
    return values, prices


def draw_stream(profile, rng, cfg: EnvConfig):
    """All impressions of one episode, one ``(values, prices)`` pair per step."""
    return [sample_impressions(profile, t, rng, cfg) for t in range(1, cfg.T + 1)]


def auction_step(state: BidState, action: float, impressions):
    """Apply one bid scaling factor to a batch of impressions.

    Returns ``(cost, reward, buy_count, next_state)``.
    """
    if not action >= 0:
        raise DomainError(f"action must be a non-negative real, got {action!r}")
    if state.remaining_budget < 0:
        raise DomainError("remaining budget is negative")
    values, prices = impressions
    cost, reward, count = resolve_auction(action, values, prices, state.remaining_budget)
    nxt = BidState(state.t + 1, cost, state.feature, max(0.0, state.remaining_budget - cost))
    return cost, reward, count, nxt


def run_episode(policy, profile: AdvertiserProfile, rng, cfg: EnvConfig, stream=None, budget=None):
    """Roll ``policy`` over one episode and return the trajectory.

    ``stream`` replays a fixed impression stream; ``budget`` overrides the
    profile budget (``math.inf`` disables budget suspension).
    """
    if stream is None:
        stream = draw_stream(profile, rng, cfg)
    if len(stream) != cfg.T:
        raise DomainError(f"impression stream has {len(stream)} steps, expected {cfg.T}")
    budget = profile.budget if budget is None else budget
    T = cfg.T
    actions = np.zeros(T)
    costs = np.zeros(T)
    rewards = np.zeros(T)
    counts = np.zeros(T, dtype=np.int64)
    state = BidState(1, 0.0, profile.feature, float(budget))
    for i in range(T):
        a = policy(state)
        if not (a >= 0 and math.isfinite(a)):
            raise EpisodeAborted(f"policy emitted action {a!r} at t={state.t} for {profile.id}")
        cost, reward, count, state = auction_step(state, a, stream[i])
        actions[i], costs[i], rewards[i], counts[i] = a, cost, reward, count
    return Trajectory(profile.id, profile.feature, float(budget), actions, costs, rewards, counts)


def trajectory_quality(traj: Trajectory):
    """Cumulative reward of a trajectory."""
    n = len(traj.rewards)
    if not (len(traj.costs) == len(traj.actions) == len(traj.buy_counts) == n):
        raise DomainError("trajectory sequences have mismatched lengths")
    return float(np.sum(traj.rewards))


def trajectory_distance(a: Trajectory, b: Trajectory):
    """Frobenius distance between two state matrices of the same advertiser.

    Time steps and features coincide, so only the cost column contributes.
    """
    if a.T != b.T:
        raise DomainError(f"horizon mismatch: {a.T} vs {b.T}")
    if not np.array_equal(a.feature, b.feature):
        raise DomainError("trajectories belong to different advertiser features")
    return float(np.linalg.norm(a.costs - b.costs))


def constant_policy(a):
    return lambda state: a
