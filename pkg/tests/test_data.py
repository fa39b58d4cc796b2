import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bidplan import data
from bidplan.data import BehaviorPolicySpec, OfflineDataset
from bidplan.env import EnvConfig, Trajectory, make_profiles, trajectory_distance
from bidplan.errors import DatasetFormatError, DomainError


def test_dataset_invariants(small_dataset):
    q = np.array([t.quality for t in small_dataset.trajectories])
    assert small_dataset.y_m == q.max()
    assert np.all((q >= 0) & (q <= small_dataset.y_m))
    for tr in small_dataset.trajectories:
        assert tr.costs.sum() <= tr.budget + 1e-9
        assert tr.quality == pytest.approx(tr.rewards.sum())
    assert len(small_dataset) == 4 * len(data.default_policy_suite()) * 4


def test_every_policy_kind_spends(small_cfg):
    (prof,) = make_profiles(small_cfg, 1, np.random.default_rng(5))
    for kind in data.POLICY_KINDS:
        ds = data.generate_dataset([prof], [BehaviorPolicySpec(kind)], 3, 0, small_cfg)
        assert all(np.all(t.actions >= 0) for t in ds.trajectories)
        assert any(t.costs.sum() > 0 for t in ds.trajectories)


def test_zero_action_dataset_has_zero_ceiling(small_cfg):
    (prof,) = make_profiles(small_cfg, 1, np.random.default_rng(0))
    spec = BehaviorPolicySpec("constant-alpha", {"grid": (0.0,)})
    ds = data.generate_dataset([prof], [spec], 1, 0, small_cfg)
    assert len(ds) == 1 and ds.y_m == 0


def test_generation_is_seeded(small_cfg):
    profiles = make_profiles(small_cfg, 2, np.random.default_rng(1))
    a = data.generate_dataset(profiles, data.default_policy_suite(), 2, 3, small_cfg)
    b = data.generate_dataset(profiles, data.default_policy_suite(), 2, 3, small_cfg)
    c = data.generate_dataset(profiles, data.default_policy_suite(), 2, 4, small_cfg)
    assert a == b
    assert a != c


def test_generation_rejects_bad_arguments(small_cfg):
    with pytest.raises(DomainError):
        data.generate_dataset([], data.default_policy_suite(), 1, 0, small_cfg)
    with pytest.raises(DomainError):
        BehaviorPolicySpec("oracle")


def test_roundtrip_bit_exact(small_dataset, tmp_path):
    path = data.save(small_dataset, tmp_path / "d.jsonl")
    back = data.load(path)
    assert back == small_dataset
    assert back.y_m == small_dataset.y_m
    data.save(back, tmp_path / "e.jsonl")
    assert (tmp_path / "d.jsonl").read_bytes() == (tmp_path / "e.jsonl").read_bytes()


def test_empty_dataset_roundtrip(tmp_path):
    ds = OfflineDataset([], 5, 5.0)
    path = data.save(ds, tmp_path / "empty.jsonl")
    assert len(path.read_text().splitlines()) == 1
    assert data.load(path) == ds


def _rewrite_record(path, mutate):
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    mutate(rec)
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")


@pytest.mark.parametrize(
    "field, mutate",
    [
        ("costs", lambda r: r["costs"].__setitem__(0, -1.0)),
        ("quality", lambda r: r.__setitem__("quality", r["quality"] + 1)),
        ("buy_counts", lambda r: r["buy_counts"].__setitem__(0, 1.5)),
        ("actions", lambda r: r.__setitem__("actions", r["actions"][:-1])),
        ("budget", lambda r: r.pop("budget")),
    ],
)
def test_load_names_offending_field(small_dataset, tmp_path, field, mutate):
    path = data.save(small_dataset, tmp_path / "d.jsonl")
    _rewrite_record(path, mutate)
    with pytest.raises(DatasetFormatError, match=field) as info:
        data.load(path)
    assert info.value.field == field and info.value.line == 2


def test_load_rejects_bad_header(tmp_path):
    p = tmp_path / "h.jsonl"
    p.write_text('{"schema_version": 99}\n')
    with pytest.raises(DatasetFormatError):
        data.load(p)


def test_sample_batch_reproducible_and_conditioned(small_dataset):
    a = data.sample_batch(small_dataset, len(small_dataset), np.random.default_rng(3))
    b = data.sample_batch(small_dataset, len(small_dataset), np.random.default_rng(3))
    assert [id(t) for t, _ in a] == [id(t) for t, _ in b]
    assert all(y == t.quality for t, y in a)


def test_sample_batch_uniform():
    trs = [Trajectory(f"p{i}", [0.0], 1.0, [0.0], [0.0], [float(i)], [0]) for i in range(10)]
    ds = OfflineDataset(trs, 1, 5.0)
    draws = data.sample_batch(ds, 100_000, np.random.default_rng(0))
    counts = np.bincount([int(y) for _, y in draws], minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_random_pairs_share_advertiser(small_dataset):
    pairs = data.sample_pairs(small_dataset, 500, "random", np.random.default_rng(0))
    for a, b in pairs:
        assert a is not b
        assert np.array_equal(a.feature, b.feature)
        trajectory_distance(a, b)


def test_perturbed_pairs_zero_noise(small_dataset):
    pairs = data.sample_pairs(small_dataset, 50, "perturbed", np.random.default_rng(0), noise_scale=0.0)
    assert all(trajectory_distance(a, b) == 0 for a, b in pairs)


def test_eight_thousand_pairs(small_dataset):
    i, j = data.sample_pair_indices(small_dataset, 8000, np.random.default_rng(2))
    assert len(i) == 8000 and np.all(i != j)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0, 0.5))
def test_perturbation_bounded(small_dataset, seed, scale):
    arr = small_dataset.arrays
    new = data.perturb_costs(arr["costs"], arr["budgets"], scale, np.random.default_rng(seed))
    step = scale * arr["budgets"][:, None] / small_dataset.T
    assert np.all(new >= 0)
    assert np.all(np.abs(new - arr["costs"]) <= step + 1e-12)


def test_condition_stats_examples():
    trs = [Trajectory("p", [0.0], 1.0, [0.0], [0.0], [q], [0]) for q in (1.0, 2.0, 3.0)]
    y_m, (counts, _), _ = data.condition_stats(OfflineDataset(trs, 1, 5.0))
    assert y_m == 3 and counts.sum() == 3
    y_m, (counts, _), _ = data.condition_stats(OfflineDataset(trs[:1], 1, 5.0))
    assert np.count_nonzero(counts) == 1


def test_condition_stats_brute_force(small_dataset):
    y_m, _, r_emp = data.condition_stats(small_dataset)
    assert y_m == max(sum(float(r) for r in t.rewards) for t in small_dataset.trajectories)
    assert 0 < r_emp <= small_dataset.r_max


def test_desk_scale_size():
    from bidplan import config, pipeline

    cfg = config.ExperimentConfig()
    n = cfg.data.n_train_advertisers * len(data.default_policy_suite()) * cfg.data.episodes_per_pair
    assert n == 2000
    assert cfg.env == EnvConfig() and cfg.env.T == 48
    assert pipeline.advertisers(cfg, 0)[0][0].budget > 0
