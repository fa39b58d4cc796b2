import numpy as np
import pytest

from bidplan import data
from bidplan.env import EnvConfig, make_profiles


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    return EnvConfig(T=8, n_impressions=(5, 20), budget_range=(20.0, 60.0))


@pytest.fixture(scope="session")
def small_dataset(small_cfg):
    profiles = make_profiles(small_cfg, 4, np.random.default_rng(1))
    return data.generate_dataset(profiles, data.default_policy_suite(), 4, 7, small_cfg)


# criterion number -> (passed, detail); filled by tests/test_acceptance.py
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def record_criterion():
    def record(k, ok, detail):
        CRITERIA[k] = (bool(ok), detail)
        return ok

    return record
