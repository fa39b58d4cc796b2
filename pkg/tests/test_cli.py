import csv
from pathlib import Path

import pytest

from bidplan import cli, config, data, pipeline

TINY = Path(__file__).parent / "tiny.toml"


def run(*args):
    return cli.main([*args, "--config", str(TINY)])


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    return header, rows


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run("gen-data", "--out", str(out)) == 0
    assert run("train", "--out", str(out)) == 0
    return out


def test_gen_data_is_loadable_and_byte_identical(trained_run, tmp_path):
    path = trained_run / "seed0" / "dataset.jsonl"
    ds = data.load(path)
    assert len(ds) == 3 * len(data.default_policy_suite()) * 3
    assert run("gen-data", "--out", str(tmp_path)) == 0
    assert (tmp_path / "seed0" / "dataset.jsonl").read_bytes() == path.read_bytes()


def test_train_writes_checkpoints_and_logs(trained_run):
    d = trained_run / "seed0"
    for name in ("evaluator.ckpt", "controller.ckpt", "planner_warm.ckpt", "planner_full.ckpt", "planner_bc.ckpt"):
        assert (d / name).exists()
    header, rows = read_csv(d / "train_log_full.csv")
    digest = config.load(TINY).digest
    assert f"# config_digest={digest} seed=0" in header
    assert len(rows) == 4 and {"L_estimate", "bc_nll", "lipschitz_penalty"} <= set(rows[0])


def test_eval_reports_deltas(trained_run, capsys):
    assert run("eval", "--out", str(trained_run)) == 0
    header, rows = read_csv(trained_run / "seed0" / "metrics.csv")
    assert header[0].startswith("# config_digest=")
    bc = [r for r in rows if r["variant"] == "bc"]
    assert bc and all(float(r["delta_gmv_pct"]) == 0 for r in bc if r["gmv"] != "0")
    assert {r["split"] for r in rows} == {"seen", "unseen", "all"}
    assert {"online_rate", "bad_case_rate", "cost_rate"} <= set(rows[0])
    assert "full" in capsys.readouterr().out


def test_lipschitz_check_histograms(trained_run):
    assert run("lipschitz-check", "--out", str(trained_run)) == 0
    d = trained_run / "seed0"
    for name in ("evaluator_pairs.csv", "planner_pairs.csv"):
        _, rows = read_csv(d / name)
        assert list(rows[0]) == ["pair_id", "distance", "delta", "ratio", "violated"]
    _, rows = read_csv(d / "lipschitz_report.csv")
    assert 0 <= float(rows[0]["evaluator_violation_rate"]) <= 1


def test_flags_override_file():
    args = cli.build_parser().parse_args(
        ["train", "--config", str(TINY), "--beta2", "0", "--beta3", "0", "--lp", "7.5", "--score-weight", "0",
         "--epsilon", "0.1", "--beta1", "3", "--seed", "4", "--seed", "5"]
    )
    cfg = cli.resolve_config(args)
    p = cfg.planner
    assert (p.beta2, p.beta3, p.L_p, p.score_weight, p.epsilon) == (0, 0, 7.5, 0, 0.1)
    assert cfg.evaluator.beta1 == 3 and cfg.seeds == (4, 5)
    auto = cli.resolve_config(cli.build_parser().parse_args(["train", "--config", str(TINY), "--lp", "auto"]))
    assert auto.planner.L_p is None


def test_missing_inputs_are_errors(tmp_path, capsys):
    assert run("train", "--out", str(tmp_path)) == 2
    assert run("eval", "--out", str(tmp_path)) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["train", "--lp", "-1"])


def test_pipeline_is_reproducible(tmp_path):
    cfg = config.load(TINY)
    outs = []
    for k in range(2):
        ds = pipeline.build_dataset(cfg, 0)
        m = pipeline.train_models(cfg, ds, 0, ("full", "bc"))
        rows = pipeline.evaluate_models(cfg, 0, m.planners, m.controller, m.target, cfg.planner.epsilon)
        outs.append(pipeline.write_csv(tmp_path / f"m{k}.csv", rows).read_bytes())
    assert outs[0] == outs[1]
