"""Command-line entry point: ``bidplan {gen-data,train,eval,lipschitz-check,ablate}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import config as config_mod
from . import data as data_mod
from . import pipeline as pp
from .errors import DomainError


def _lp(value):
    if value == "auto":
        return "auto"
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("--lp takes 'auto' or a positive number") from None
    if v <= 0:
        raise argparse.ArgumentTypeError("--lp must be positive")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="bidplan", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML file; its values override the preset")
    common.add_argument("--preset", default="desk", choices=["desk", "table5"])
    common.add_argument("--seed", type=int, action="append", help="repeatable; default: the config's seeds")
    common.add_argument("--out", type=Path, help="output directory (default: config 'out')")
    common.add_argument("--beta1", type=float)
    common.add_argument("--beta2", type=float)
    common.add_argument("--beta3", type=float)
    common.add_argument("--lp", type=_lp, help="'auto' or a fixed planner Lipschitz budget")
    common.add_argument("--epsilon", type=float)
    common.add_argument("--score-weight", type=float)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate and save the offline dataset")
    sub.add_parser("train", parents=[common], help="train evaluator, controller and planners")
    sub.add_parser("eval", parents=[common], help="closed-loop metrics against the behavior-cloning baseline")
    sub.add_parser("lipschitz-check", parents=[common], help="Lipschitz estimates and per-pair histograms")
    sub.add_parser("ablate", parents=[common], help="train and evaluate the beta2/beta3 ablation grid")
    return parser


def resolve_config(args):
    cfg = config_mod.preset(args.preset)
    if args.config is not None:
        cfg = config_mod.load(args.config, cfg)
    ev, p = {}, {}
    if args.beta1 is not None:
        ev["beta1"] = args.beta1
    for flag, key in (("beta2", "beta2"), ("beta3", "beta3"), ("epsilon", "epsilon"), ("score_weight", "score_weight")):
        if getattr(args, flag) is not None:
            p[key] = getattr(args, flag)
    if args.lp is not None:
        p["L_p"] = None if args.lp == "auto" else args.lp
    top = {}
    if args.seed:
        top["seeds"] = tuple(args.seed)
    if args.out is not None:
        top["out"] = str(args.out)
    cfg = dataclasses.replace(
        cfg,
        evaluator=dataclasses.replace(cfg.evaluator, **ev),
        planner=dataclasses.replace(cfg.planner, **p),
        **top,
    )
    return config_mod.validate(cfg)


def seed_dir(cfg, seed):
    return Path(cfg.out) / f"seed{seed}"


def header(cfg, seed):
    return [f"config_digest={cfg.digest} seed={seed}"]


def dataset_path(cfg, seed):
    return seed_dir(cfg, seed) / "dataset.jsonl"


def load_or_build(cfg, seed):
    path = dataset_path(cfg, seed)
    if not path.exists():
        raise DomainError(f"{path} not found; run gen-data first")
    return data_mod.load(path)


def cmd_gen_data(cfg, seed):
    path = dataset_path(cfg, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = pp.build_dataset(cfg, seed)
    data_mod.save(ds, path)
    print(f"seed {seed}: {len(ds)} trajectories -> {path}")


def cmd_train(cfg, seed, variants=("full", pp.BASELINE)):
    ds = load_or_build(cfg, seed)
    m = pp.train_models(cfg, ds, seed, variants, out=seed_dir(cfg, seed))
    print(f"seed {seed}: L_p={m.L_p:.4g} (dataset estimate {m.dataset_lipschitz:.4g}); "
          f"evaluator rmse={m.evaluator_report.delta_d:.4g}; variants {', '.join(m.planners)}")
    return m


def cmd_eval(cfg, seed):
    models = pp.load_models(seed_dir(cfg, seed))
    if pp.BASELINE not in models["planners"]:
        raise DomainError(f"baseline checkpoint planner_{pp.BASELINE}.ckpt missing")
    rows = pp.evaluate_models(cfg, seed, models["planners"], models["controller"], models["target"], models["epsilon"])
    path = pp.write_csv(seed_dir(cfg, seed) / "metrics.csv", rows, header(cfg, seed))
    for name, r in pp.summary(rows).items():
        print(f"seed {seed} {name:>13}: GMV {r['gmv']:.1f} ({r['delta_gmv_pct']:+.2f}%)  "
              f"cost {r['cost']:.1f} ({r['delta_cost_pct']:+.2f}%)  bad-case {r['bad_case_rate']:.3f}")
    print(f"-> {path}")
    return rows


def cmd_lipschitz_check(cfg, seed):
    out = seed_dir(cfg, seed)
    models = pp.load_models(out)
    ds = load_or_build(cfg, seed)
    name = "full" if "full" in models["planners"] else next(iter(models["planners"]))
    planner = models["planners"][name]
    L_p, lip = pp.resolve_lp(cfg, ds, seed)
    report, ev_rows, pl_rows = pp.lipschitz_check(
        cfg, seed, ds, models["evaluator"], planner, models["target"], models["epsilon"], L_p, lip
    )
    pp.write_csv(out / "lipschitz_report.csv", [report.row()], header(cfg, seed) + [f"planner={name} L_p={L_p:.6g}"])
    pp.write_csv(out / "evaluator_pairs.csv", ev_rows, header(cfg, seed))
    pp.write_csv(out / "planner_pairs.csv", pl_rows, header(cfg, seed) + [f"L_p={L_p:.6g}"])
    for k, v in report.row().items():
        print(f"seed {seed} {k}: {v:.4g}")
    return report


def cmd_ablate(cfg, seed):
    ds = load_or_build(cfg, seed) if dataset_path(cfg, seed).exists() else pp.build_dataset(cfg, seed)
    m = pp.train_models(cfg, ds, seed, tuple(pp.VARIANTS), out=seed_dir(cfg, seed))
    rows = pp.evaluate_models(cfg, seed, m.planners, m.controller, m.target, cfg.planner.epsilon)
    pp.write_csv(seed_dir(cfg, seed) / "ablation.csv", rows, header(cfg, seed))
    for name, r in pp.summary(rows).items():
        print(f"seed {seed} {name:>13}: GMV {r['gmv']:.1f} ({r['delta_gmv_pct']:+.2f}%)  "
              f"bad-case {r['bad_case_rate']:.3f}")
    return rows


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "lipschitz-check": cmd_lipschitz_check,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        for seed in cfg.seeds:
            COMMANDS[args.command](cfg, seed)
    except DomainError as exc:
        print(f"bidplan: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
