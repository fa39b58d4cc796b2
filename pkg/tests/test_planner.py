import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from toys import FunctionScore, linear_planner, quadrature_gradient, quadrature_objective, scalar_planner

from bidplan import planner as pl
from bidplan.errors import DomainError
from bidplan.evaluator import EvaluatorModel
from bidplan.gradcore import finite_difference_grad
from bidplan.planner import PlannerModel


def random_planner(T=6, feature_dim=2, sigma=0.05, seed=0, hidden=(8,), window=3):
    return PlannerModel(T, feature_dim, 10.0, sigma, window, hidden, rng=np.random.default_rng(seed))


def test_zero_noise_is_mean_rollout():
    m = random_planner()
    f = np.array([0.2, -0.1])
    costs = pl.generate(m, 7.0, np.zeros(m.T), f)
    assert np.allclose(m.means(costs, 7.0, f)[0], costs)


def test_zero_network_gives_scaled_noise():
    m = PlannerModel(5, 1, 10.0, sigma=0.1, window=2, hidden=(4,))
    eta = np.random.default_rng(0).standard_normal(5)
    assert np.allclose(pl.generate(m, 3.0, eta, [0.0]), 0.1 * eta)


def test_generate_deterministic():
    m = random_planner()
    eta = np.random.default_rng(1).standard_normal((3, m.T))
    assert np.array_equal(pl.generate(m, 5.0, eta, [0, 0]), pl.generate(m, 5.0, eta, [0, 0]))


def test_history_is_kept_and_causal():
    m = random_planner()
    rng = np.random.default_rng(2)
    full = pl.generate(m, 5.0, rng.standard_normal(m.T), [0, 0])
    hist = full[:3]
    cont = pl.generate(m, 5.0, np.zeros(m.T - 3), [0, 0], history=hist)
    assert np.array_equal(cont[:3], hist)
    assert cont[3] == pytest.approx(pl.next_cost(m, hist, 5.0, [0, 0]))
    # later steps never feed earlier means
    changed = full.copy()
    changed[4:] += 1.0
    assert np.allclose(m.means(full, 5.0, [0, 0])[0, :5], m.means(changed, 5.0, [0, 0])[0, :5])


def test_log_prob_standard_normal_mode():
    m = PlannerModel(1, 0, 1.0, sigma=1.0, window=0, hidden=(), cumulative=False)
    assert pl.log_prob(m, [0.0], 1.0) == pytest.approx(-0.5 * math.log(2 * math.pi))


def test_log_prob_factorizes():
    m = random_planner()
    rng = np.random.default_rng(3)
    c = rng.uniform(0, 0.3, m.T)
    f = [0.1, 0.2]
    total = 0.0
    for t in range(m.T):
        mu = pl.next_cost(m, c[:t], 4.0, f)
        total += stats.norm.logpdf(c[t], mu, m.sigma)
    assert pl.log_prob(m, c, 4.0, f) == pytest.approx(total)


def test_log_prob_gradient_matches_finite_differences():
    m = random_planner(sigma=0.3)
    c = np.random.default_rng(4).uniform(0, 0.3, (2, m.T))
    base = m.net.params.values.copy()

    def f(flat):
        m.net.params.values[:] = flat
        return float(np.sum(pl.log_prob(m, c, 4.0, [0.1, 0.2])))

    fd = finite_difference_grad(f, base)
    m.net.params.values[:] = base
    g = pl.log_prob_grad(m, c, 4.0, [0.1, 0.2])
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-4


def test_bc_loss_hand_computed():
    m = PlannerModel(2, 0, 1.0, sigma=0.5, window=1, hidden=(), cumulative=False)
    m.net.params.view("W0")[...] = [[0.5], [0.0], [0.0]]  # mu_t = 0.5 * c_{t-1}
    c = np.array([0.2, 0.4])
    z = np.array([0.2, 0.4 - 0.5 * 0.2]) / 0.5
    nll = np.sum(0.5 * z**2 + math.log(0.5) + 0.5 * math.log(2 * math.pi))
    assert pl.bc_loss(m, c, 1.0)[0] == pytest.approx(nll)


def test_bc_minimized_at_constant():
    m = linear_planner(4, 0.0, b=0.25, sigma=0.1)
    data = np.full((5, 4), 0.25)
    loss0, g = pl.bc_loss(m, data, 1.0)
    assert np.allclose(g, 0)
    m.net.params.view("b0")[...] += 0.1
    assert pl.bc_loss(m, data, 1.0)[0] > loss0


def test_bc_decreases_early_on_toy_set(small_dataset):
    from bidplan.data import OfflineDataset

    ds = OfflineDataset(small_dataset.trajectories[:10], small_dataset.T, small_dataset.r_max)
    arr = ds.arrays
    m = PlannerModel(ds.T, 3, ds.y_m, 0.05, 4, (16,), rng=np.random.default_rng(0))
    from bidplan.gradcore import Adam

    opt = Adam(lr=1e-3)
    losses = []
    for _ in range(50):
        loss, g = pl.bc_loss(m, arr["norm_costs"], arr["qualities"], arr["features"])
        losses.append(loss)
        opt.step(m.net.params, g)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_bc_rejects_empty_batch():
    with pytest.raises(DomainError):
        pl.bc_loss(random_planner(), np.zeros((0, 6)), 1.0)


def test_score_gradient_zero_mean_for_constant_evaluator():
    m = scalar_planner(np.array([0.0, 0.3, 0.1]), sigma=0.5)
    ev = FunctionScore(lambda c: np.full(len(c), 2.5))
    _, g, _ = pl.score_gradient(m, ev, 1.0, np.zeros((1000, 0)), np.ones(1000), np.random.default_rng(0), 2.5)
    assert not g.any()
    _, g, _ = pl.score_gradient(m, ev, 1.0, np.zeros((20000, 0)), np.ones(20000), np.random.default_rng(0))
    # without the baseline the estimate is still centered on zero
    assert np.all(np.abs(g) < 4 * 2.5 / 0.5 / math.sqrt(20000))


def test_score_gradient_matches_quadrature_coarsely():
    theta, sigma, y = np.array([0.0, 0.4, -0.1]), 0.5, 1.0
    m = scalar_planner(theta, sigma)
    n = 200_000
    base = quadrature_objective(theta, sigma, y)
    L, g, _ = pl.score_gradient(
        m, FunctionScore(lambda c: np.sin(3 * c[:, 0]) - (c[:, 0] - 0.2) ** 2),
        y, np.zeros((n, 0)), np.ones(n), np.random.default_rng(1), base,
    )
    oracle = quadrature_gradient(theta, sigma, y)
    assert L == pytest.approx(base, abs=0.01)
    assert np.linalg.norm(g - oracle) / np.linalg.norm(oracle) < 0.05


def test_ascent_step_raises_quadrature_objective():
    theta, sigma, y = np.array([0.0, 0.4, -0.1]), 0.5, 1.0
    m = scalar_planner(theta, sigma)
    n = 50_000
    _, g, _ = pl.score_gradient(
        m, FunctionScore(lambda c: np.sin(3 * c[:, 0]) - (c[:, 0] - 0.2) ** 2),
        y, np.zeros((n, 0)), np.ones(n), np.random.default_rng(2), quadrature_objective(theta, sigma, y),
    )
    assert quadrature_objective(theta + 0.05 * g, sigma, y) > quadrature_objective(theta, sigma, y)


def test_sync_w1_zero_and_symmetric():
    m = random_planner()
    f = [0.3, 0.3]
    assert pl.sync_coupled_w1(m, 4.0, 4.0, 16, np.random.default_rng(0), f) == 0
    a = pl.sync_coupled_w1(m, 4.0, 7.0, 16, np.random.default_rng(5), f)
    b = pl.sync_coupled_w1(m, 7.0, 4.0, 16, np.random.default_rng(5), f)
    assert a == pytest.approx(b)


@settings(max_examples=30, deadline=None)
@given(w=st.floats(-2, 2), y1=st.floats(0, 3), y2=st.floats(0, 3), T=st.integers(1, 10))
def test_sync_w1_linear_closed_form(w, y1, y2, T):
    m = linear_planner(T, w, b=0.1, sigma=0.2)
    got = pl.sync_coupled_w1(m, y1, y2, 3, np.random.default_rng(0))
    assert got == pytest.approx(T * abs(w) * abs(y1 - y2), abs=1e-9)


def test_sync_bounds_exact_transport_on_matched_samples():
    from bidplan import theory

    m = random_planner(T=8, sigma=0.05, hidden=(16,), window=4)
    rng = np.random.default_rng(6)
    for _ in range(5):
        y1, y2 = rng.uniform(0, 10, 2)
        r = theory.coupling_check(m, y1, y2, 64, rng, [0.1, -0.2])
        assert r.sync + 3 * r.pooled_se >= r.empirical


def test_coupled_w1_gradient_matches_finite_differences():
    m = random_planner(T=5, sigma=0.05, hidden=(6,), window=2)
    rng = np.random.default_rng(7)
    Y = rng.uniform(0, 10, (4, 2))
    F = rng.normal(size=(4, 2))
    eta = rng.standard_normal((4, 5))
    w = rng.uniform(0.5, 1.5, 4)
    base = m.net.params.values.copy()

    def f(flat):
        m.net.params.values[:] = flat
        c1, _ = pl.rollout(m, Y[:, 0], F, eta)
        c2, _ = pl.rollout(m, Y[:, 1], F, eta)
        return float(w @ np.abs(c1 - c2).sum(axis=1))

    fd = finite_difference_grad(f, base, step=1e-7)
    m.net.params.values[:] = base
    _, g = pl.coupled_w1_grad(m, Y, F, eta, w)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-4


def test_lipschitz_penalty_inactive_for_huge_budget():
    m = random_planner()
    pool = np.linspace(1, 9, 20)
    pen, g = pl.lipschitz_penalty(m, pool, np.zeros((20, 2)), 1e6, 16, 4, np.random.default_rng(0))
    assert pen == 0 and not g.any()


def test_lipschitz_penalty_identical_conditions_contribute_nothing():
    m = random_planner()
    pool = np.full(10, 5.0)
    pen, _ = pl.lipschitz_penalty(m, pool, np.zeros((10, 2)), 1e-3, 8, 2, np.random.default_rng(0), y_star=5.0)
    assert pen == 0


def test_lipschitz_penalty_linear_hand_computation():
    T, w, L_p = 4, 0.5, 1.0
    m = linear_planner(T, w, sigma=0.1, y_m=2.0)
    pool = np.array([0.0, 1.0, 3.0])
    rng = np.random.default_rng(3)
    pen, g = pl.lipschitz_penalty(m, pool, np.zeros((3, 0)), L_p, 40, 2, np.random.default_rng(3))
    i = rng.integers(0, 3, 40)
    j = rng.integers(0, 3, 40)
    du = np.abs(pool[i] - pool[j]) / 2.0
    expected = np.mean(np.maximum(T * w * du - L_p * du, 0.0))
    assert pen == pytest.approx(expected)
    # d/dW of sum_t |W du / T| over active pairs is |du|; other weights cancel
    W = m.net.params.view("W0", g)
    active = T * w * du > L_p * du
    assert W[m._cond_col, 0] == pytest.approx(np.mean(np.where(active, du, 0.0)))
    assert np.allclose(np.delete(g, m.net.params.layout["W0"][0].start + m._cond_col), 0, atol=1e-12)


def test_local_pairs_probe_small_gaps():
    m = linear_planner(4, 2.0, sigma=0.1)
    pool = np.linspace(1, 2, 10)
    pen_local, _ = pl.lipschitz_penalty(
        m, pool, np.zeros((10, 0)), 1.0, 64, 1, np.random.default_rng(0), local_frac=1.0, local_scale=0.01
    )
    # slope T*w = 8 exceeds L_p = 1 everywhere; local gaps are at most 0.01
    assert 0 < pen_local <= 7 * 0.01


def test_feasible_projection():
    c = np.array([[0.5, -0.1, 0.4, 0.3, 0.2]])
    out = pl.feasible_costs(c)
    assert np.allclose(out, [[0.5, 0.0, 0.4, 0.1, 0.0]])
    assert np.allclose(pl.feasible_costs(np.array([0.1, 0.2])), [0.1, 0.2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=12))
def test_feasible_projection_invariants(xs):
    out = pl.feasible_costs(np.array(xs))
    assert np.all(out >= 0) and out.sum() <= 1 + 1e-12
    assert np.all(out <= np.maximum(xs, 0) + 1e-12)


def test_condition_target_known_and_unseen():
    t = pl.ConditionTarget([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0]], [10.0, 20.0, 30.0, 99.0], k=3)
    assert t([[1.0, 0.0]])[0] == 20.0
    # equidistant from the three nearest known advertisers
    assert t([[0.5, 0.5]])[0] == pytest.approx(20.0)
    back = pl.ConditionTarget.from_state(t.state())
    assert np.array_equal(back([[0.2, 0.1]]), t([[0.2, 0.1]]))


def test_planner_loss_components(small_dataset):
    m = PlannerModel(small_dataset.T, 3, small_dataset.y_m, 0.05, 4, (8,), rng=np.random.default_rng(0))
    ev = EvaluatorModel(small_dataset.T, 3, small_dataset.y_m, 5.0, 60.0, (8,), np.random.default_rng(1))
    cfg = pl.PlannerTrainConfig(n_rollouts=16, bc_batch=8, n_pairs=4, n_noise=2, L_p=0.01)
    parts, g = pl.planner_loss(m, ev, small_dataset, cfg, np.random.default_rng(2))
    assert all(math.isfinite(v) for v in (parts.L_estimate, parts.bc_nll, parts.lipschitz_penalty))
    assert parts.lipschitz_penalty > 0

    bc_only = pl.PlannerTrainConfig(score_weight=0.0, beta3=0.0, bc_batch=8)
    parts, g = pl.planner_loss(m, ev, small_dataset, bc_only, np.random.default_rng(2))
    arr = small_dataset.arrays
    rng_bc = np.random.default_rng(2).spawn(3)[1]
    idx = rng_bc.integers(0, len(small_dataset), 8)
    _, g_bc = pl.bc_loss(m, arr["norm_costs"][idx], arr["qualities"][idx], arr["features"][idx])
    assert math.isnan(parts.L_estimate)
    assert np.allclose(g, bc_only.beta2 * g_bc)


def test_zero_steps_returns_warm_start(small_dataset):
    m = PlannerModel(small_dataset.T, 3, small_dataset.y_m, 0.05, 4, (8,), rng=np.random.default_rng(0))
    before = m.net.params.values.copy()
    ev = EvaluatorModel(small_dataset.T, 3, small_dataset.y_m, 5.0, 60.0, (8,), np.random.default_rng(1))
    out, logs = pl.train_planner(m, ev, small_dataset, pl.PlannerTrainConfig(steps=0), np.random.default_rng(0))
    assert logs == [] and np.array_equal(out.net.params.values, before)


def test_short_training_logs_every_step(small_dataset, tmp_path):
    m = PlannerModel(small_dataset.T, 3, small_dataset.y_m, 0.05, 4, (8,), rng=np.random.default_rng(0))
    ev = EvaluatorModel(small_dataset.T, 3, small_dataset.y_m, 5.0, 60.0, (8,), np.random.default_rng(1))
    cfg = pl.PlannerTrainConfig(steps=6, n_rollouts=16, bc_batch=8, n_pairs=4, n_noise=2, eval_every=3)
    _, logs = pl.train_planner(m, ev, small_dataset, cfg, np.random.default_rng(0), tmp_path / "log.csv")
    assert [r["step"] for r in logs] == list(range(6))
    assert "val_L" in logs[2]
    assert len((tmp_path / "log.csv").read_text().splitlines()) >= 7


def test_checkpoint_roundtrip(tmp_path):
    m = random_planner()
    m.save(tmp_path / "p.ckpt")
    back = PlannerModel.load(tmp_path / "p.ckpt")
    eta = np.random.default_rng(0).standard_normal(m.T)
    assert np.array_equal(pl.generate(back, 3.0, eta, [1, 2]), pl.generate(m, 3.0, eta, [1, 2]))


def test_config_validation():
    with pytest.raises(DomainError):
        pl.PlannerTrainConfig(beta2=-1)
    with pytest.raises(DomainError):
        pl.PlannerTrainConfig(L_p=0)
    with pytest.raises(DomainError):
        PlannerModel(3, 0, 1.0, sigma=0.0)
