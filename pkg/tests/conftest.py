"""Shared fixtures: a small synthetic log and its train/eval split."""

import numpy as np
import pytest

from vgen import data
from vgen.training import TrainConfig

SMALL = dict(
    d_model=8, d_v=8, d_p=4, hidden=16, heads=2, L=1, L_hist=6, M=4, rank=2,
    n_users=60, n_videos=80, n_impressions=3000, batch_size=128, epochs=1,
    dtype="float64", baseline_epochs=5,
)


@pytest.fixture(scope="session")
def small_cfg():
    return TrainConfig(**SMALL)


@pytest.fixture(scope="session")
def small_log(small_cfg):
    records, oracle = data.synth_generate(small_cfg.synth_config())
    return records, oracle


@pytest.fixture(scope="session")
def small_split(small_cfg, small_log):
    records, _ = small_log
    examples = data.build_examples(records, small_cfg.L_hist, small_cfg.M, small_cfg.n_behaviors)
    return data.time_split(examples, small_cfg.split)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
