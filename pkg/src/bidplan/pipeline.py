"""End-to-end stages: data, evaluator, controller, planner variants, evaluation, Lipschitz checks."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import planner as pl
from . import theory
from .config import ExperimentConfig, stage_rng, stage_seed
from .controller import InverseDynamicsModel, planning_policy, train_inverse_dynamics
from .env import make_profiles, run_episode
from .errors import DomainError
from .evaluator import EvaluatorModel, estimate_lipschitz, train_evaluator

# planner variants: overrides applied to the configured planner settings
VARIANTS = {
    "full": {},
    # DT-like baseline: conditional behavior cloning only
    "bc": {"score_weight": 0.0, "beta3": 0.0},
    "no_kl": {"beta2": 0.0},
    "no_lipschitz": {"beta3": 0.0},
}
BASELINE = "bc"


def advertisers(cfg: ExperimentConfig, seed):
    """``(seen, unseen)`` profiles; only the seen ones contribute to the dataset."""
    rng = stage_rng(seed, "profiles")
    seen = make_profiles(cfg.env, cfg.data.n_train_advertisers, rng, prefix="adv")
    unseen = make_profiles(cfg.env, cfg.data.n_eval_advertisers, rng, prefix="new")
    return seen, unseen


def build_dataset(cfg: ExperimentConfig, seed):
    seen, _ = advertisers(cfg, seed)
    return data_mod.generate_dataset(
        seen,
        data_mod.default_policy_suite(),
        cfg.data.episodes_per_pair,
        stage_seed(seed, "data"),
        cfg.env,
        cfg.digest,
    )


def resolve_lp(cfg: ExperimentConfig, dataset, seed):
    """``(L_p, dataset_lipschitz)``; an explicit ``L_p`` wins over the data estimate."""
    p = cfg.planner
    est = theory.dataset_lipschitz(dataset, p.lp_bins, p.lp_samples, stage_rng(seed, "lipschitz", 0))
    if cfg.planner.L_p is not None:
        return float(cfg.planner.L_p), est
    return cfg.planner.lp_factor * max(est, 1e-6), est


def planner_train_config(cfg: ExperimentConfig, L_p, **overrides):
    p = dataclasses.asdict(cfg.planner)
    kw = {f.name: p[f.name] for f in dataclasses.fields(pl.PlannerTrainConfig) if f.name in p}
    kw["L_p"] = L_p
    kw.update(overrides)
    return pl.PlannerTrainConfig(**kw)


@dataclass
class TrainedModels:
    evaluator: EvaluatorModel
    controller: InverseDynamicsModel
    target: pl.ConditionTarget
    planners: dict
    L_p: float
    dataset_lipschitz: float
    evaluator_report: object
    logs: dict = field(default_factory=dict)


def train_models(cfg: ExperimentConfig, dataset, seed, variants=("full", BASELINE), out=None):
    """Algorithm pipeline: Lipschitz budget, evaluator, controller, warm start, planner variants.

    All variants start from the same warm-started planner and consume the same
    random stream, so their differences come from the loss terms alone. With
    ``out`` set, each stage's artifacts are written as soon as it finishes.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise DomainError(f"unknown planner variants {unknown}")
    out = None if out is None else Path(out)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    header = [f"config_digest={cfg.digest} seed={seed}"]
    L_p, lip = resolve_lp(cfg, dataset, seed)
    feat_dim = dataset.arrays["features"].shape[1]

    rng = stage_rng(seed, "evaluator")
    evaluator = EvaluatorModel(dataset.T, feat_dim, dataset.y_m, cfg.env.r_max, cfg.env.budget_range[1], rng=rng)
    ckpt = None if out is None else out / "evaluator.diverged.ckpt"
    evaluator, report = train_evaluator(evaluator, dataset, cfg.evaluator, rng, checkpoint=ckpt)
    if out is not None:
        evaluator.save(out / "evaluator.ckpt")
        write_csv(out / "evaluator_report.csv", [report.row()], header)

    controller = train_inverse_dynamics(dataset, stage_rng(seed, "controller"), cfg.controller)
    target = pl.ConditionTarget.from_dataset(dataset)
    if out is not None:
        controller.save(out / "controller.ckpt")
        (out / "target.json").write_text(json.dumps({**target.state(), "epsilon": cfg.planner.epsilon}))

    p = cfg.planner
    warm = pl.PlannerModel(
        dataset.T, feat_dim, dataset.y_m, p.sigma, p.window, tuple(p.hidden), rng=stage_rng(seed, "planner_init")
    )
    pl.pretrain_bc(warm, dataset, p.pretrain_steps, stage_rng(seed, "pretrain"), p.pretrain_lr, p.bc_batch)
    if out is not None:
        warm.save(out / "planner_warm.ckpt")

    planners, logs = {}, {}
    for name in variants:
        model = warm.copy()
        tcfg = planner_train_config(cfg, L_p, **VARIANTS[name])
        model, log = pl.train_planner(model, evaluator, dataset, tcfg, stage_rng(seed, "planner"))
        planners[name], logs[name] = model, log
        if out is not None:
            model.save(out / f"planner_{name}.ckpt", {"variant": name, "L_p": L_p})
            pl.write_log(out / f"train_log_{name}.csv", log, header + [f"variant={name}"])
    return TrainedModels(evaluator, controller, target, planners, L_p, lip, report, logs)


def load_models(out):
    out = Path(out)
    if not (out / "controller.ckpt").exists():
        raise DomainError(f"no checkpoints in {out}; run train first")
    planners = {}
    for path in sorted(out.glob("planner_*.ckpt")):
        name = path.stem.removeprefix("planner_")
        if name != "warm":
            planners[name] = pl.PlannerModel.load(path)
    if not planners:
        raise DomainError(f"no planner checkpoints in {out}")
    st = json.loads((out / "target.json").read_text())
    return {
        "evaluator": EvaluatorModel.load(out / "evaluator.ckpt"),
        "controller": InverseDynamicsModel.load(out / "controller.ckpt"),
        "target": pl.ConditionTarget.from_state(st),
        "epsilon": st["epsilon"],
        "planners": planners,
    }


def rollout_split(cfg: ExperimentConfig, seed, planner, controller, target, epsilon, profiles, split):
    """Closed-loop episodes; every variant replays the same impression streams."""
    trajs = []
    for k, prof in enumerate(profiles):
        y_star = (1.0 + epsilon) * float(target(prof.feature)[0])
        for e in range(cfg.eval.episodes_per_advertiser):
            rng = stage_rng(seed, "eval", split, k, e)
            trajs.append(run_episode(planning_policy(planner, controller, y_star, prof), prof, rng, cfg.env))
    return trajs


def aggregate(trajs, exhaust_tol=0.01):
    ms = [theory.episode_metrics(t, exhaust_tol=exhaust_tol) for t in trajs]
    gmv = float(np.mean([m.gmv for m in ms]))
    cost = float(np.mean([m.cost for m in ms]))
    return {
        "episodes": len(ms),
        "gmv": gmv,
        "buy_cnt": float(np.mean([m.buy_cnt for m in ms])),
        "cost": cost,
        "roi": gmv / cost if cost > 0 else 0.0,
        "online_rate": float(np.mean([m.online_rate for m in ms])),
        "bad_case_rate": float(np.mean([m.flags.any for m in ms])),
        "cost_rate": float(np.mean([m.cost_rate for m in ms])),
    }


def budget_level(cfg: ExperimentConfig, budget):
    if cfg.env.budget_levels:
        return f"{budget:g}"
    lo, hi = cfg.env.budget_range
    n = cfg.eval.budget_bins
    k = min(n - 1, int((budget - lo) / max(hi - lo, 1e-12) * n))
    return f"{lo + k * (hi - lo) / n:g}-{lo + (k + 1) * (hi - lo) / n:g}"


DELTA_COLUMNS = ("gmv", "buy_cnt", "cost", "roi")


def evaluate_models(cfg: ExperimentConfig, seed, planners, controller, target, epsilon):
    """Metric rows per variant, split and budget level, with percent changes against the baseline."""
    seen, unseen = advertisers(cfg, seed)
    rows = []
    for name, planner in planners.items():
        by_split = {
            "seen": rollout_split(cfg, seed, planner, controller, target, epsilon, seen, 0),
            "unseen": rollout_split(cfg, seed, planner, controller, target, epsilon, unseen, 1) if unseen else [],
        }
        by_split["all"] = by_split["seen"] + by_split["unseen"]
        for split, trajs in by_split.items():
            if not trajs:
                continue
            levels = {"all": trajs}
            for t in trajs:
                levels.setdefault(budget_level(cfg, t.budget), []).append(t)
            for level, group in levels.items():
                rows.append({"variant": name, "split": split, "budget_level": level,
                             **aggregate(group, cfg.eval.exhaust_tol)})
    base = {(r["split"], r["budget_level"]): r for r in rows if r["variant"] == BASELINE}
    for r in rows:
        ref = base.get((r["split"], r["budget_level"]))
        for col in DELTA_COLUMNS:
            r[f"delta_{col}_pct"] = (
                100.0 * (r[col] - ref[col]) / ref[col] if ref is not None and ref[col] != 0 else float("nan")
            )
    return rows


def summary(rows, split="all"):
    """``variant -> metrics`` for the overall budget level of one split."""
    return {r["variant"]: r for r in rows if r["split"] == split and r["budget_level"] == "all"}


def planner_pairs(dataset, target, epsilon, n_pairs, rng):
    """Condition pairs within one advertiser's range; half of them involve its target condition."""
    arrs = dataset.arrays
    i, j = data_mod.sample_pair_indices(dataset, n_pairs, rng)
    y1 = arrs["qualities"][i].copy()
    y2 = arrs["qualities"][j].copy()
    half = n_pairs // 2
    y2[:half] = (1.0 + epsilon) * target(arrs["features"][i[:half]])
    return y1, y2, arrs["features"][i]


def lipschitz_check(cfg: ExperimentConfig, seed, dataset, evaluator, planner, target, epsilon, L_p, lip=None):
    """Evaluator and planner Lipschitz estimates plus the per-pair histogram rows."""
    n = cfg.eval.lipschitz_pairs
    est = estimate_lipschitz(evaluator, dataset, n, stage_rng(seed, "lipschitz", 1))
    ev_rows = [
        {"pair_id": k, "distance": d, "delta": g, "ratio": g / d, "violated": int(g / d > est.bound)}
        for k, (d, g) in enumerate(zip(est.distance, est.delta))
    ]
    rng = stage_rng(seed, "lipschitz", 2)
    y1, y2, feats = planner_pairs(dataset, target, epsilon, n, rng)
    dist, delta = theory.planner_pair_ratios(planner, y1, y2, feats, cfg.eval.planner_noise, rng)
    keep = dist > 0
    ratio = delta[keep] / dist[keep]
    pl_rows = [
        {"pair_id": k, "distance": d, "delta": g, "ratio": g / d, "violated": int(g / d > L_p)}
        for k, (d, g) in enumerate(zip(dist[keep], delta[keep]))
    ]
    if lip is None:
        _, lip = resolve_lp(cfg, dataset, seed)
    report = theory.LipschitzReport(
        y_lipschitz_hat=theory.quality_lipschitz(dataset, n, stage_rng(seed, "lipschitz", 3)),
        dataset_lipschitz_hat=float(lip),
        planner_lipschitz_hat=float(ratio.max()) if len(ratio) else 0.0,
        planner_violation_rate=float(np.mean(ratio > L_p)) if len(ratio) else 0.0,
        evaluator_l_hat=est.l_hat,
        evaluator_k_hat=est.k_hat,
        evaluator_violation_rate=est.violation_rate,
    )
    return report, ev_rows, pl_rows


def write_csv(path, rows, header_lines=()):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        if not rows:
            return Path(path)
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
    return Path(path)


def _fmt(x):
    return "nan" if math.isnan(x) else format(x, ".10g")
