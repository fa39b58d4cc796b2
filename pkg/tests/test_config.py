from pathlib import Path

import numpy as np
import pytest

from bidplan import config
from bidplan.errors import DomainError

CONFIGS = Path(config.__file__).parent / "configs"


def test_shipped_files_match_presets():
    assert config.load(CONFIGS / "desk.toml").digest == config.preset("desk").digest
    assert config.load(CONFIGS / "table5.toml").digest == config.preset("table5").digest


def test_table5_preset():
    cfg = config.preset("table5")
    assert cfg.env.T == 96 and cfg.data.n_train_advertisers == 30
    assert cfg.env.budget_levels == (1500.0, 2000.0, 2500.0, 3000.0)


def test_file_overrides_defaults(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seeds = [7]\n[planner]\nbeta3 = 0.0\nhidden = [16, 16]\n[env]\nT = 12\n')
    cfg = config.load(p)
    assert cfg.seeds == (7,) and cfg.planner.beta3 == 0 and cfg.planner.hidden == (16, 16)
    assert cfg.env.T == 12 and cfg.env.budget_range == config.ExperimentConfig().env.budget_range


@pytest.mark.parametrize("text", ["[planner]\nbogus = 1\n", "nonsense = 3\n", "planner = 3\n", "[planner]\nsigma = -1.0\n"])
def test_bad_files_rejected(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(DomainError):
        config.load(p)


def test_digest_tracks_results_not_bookkeeping():
    a = config.ExperimentConfig()
    b = config.from_dict({"seeds": [9], "out": "elsewhere"})
    c = config.from_dict({"planner": {"beta2": 0.0}})
    assert a.digest == b.digest != c.digest
    assert len(a.digest) == 16


def test_stage_streams_are_independent_and_reproducible():
    x = config.stage_rng(3, "planner").random(4)
    assert np.array_equal(x, config.stage_rng(3, "planner").random(4))
    assert not np.array_equal(x, config.stage_rng(3, "evaluator").random(4))
    assert not np.array_equal(x, config.stage_rng(4, "planner").random(4))
    assert not np.array_equal(config.stage_rng(3, "eval", 0, 1).random(2), config.stage_rng(3, "eval", 1, 0).random(2))
    with pytest.raises(DomainError):
        config.stage_rng(0, "nope")
    with pytest.raises(DomainError):
        config.preset("huge")
