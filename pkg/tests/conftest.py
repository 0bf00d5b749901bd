"""Shared fixtures: a small synthetic experiment that runs in well under a
second, reused by the engine, baseline and CLI tests."""

from dataclasses import replace

import pytest

from fedspd.config import default_config
from fedspd.engine import load_data


@pytest.fixture(scope="session")
def small_cfg():
    return replace(
        default_config(),
        n_clients=10,
        clients_per_round=4,
        rounds=5,
        synthetic_d=20,
        synthetic_train=1000,
        synthetic_test=200,
        total_budget=1.0,
        record_timing=False,
    )


@pytest.fixture(scope="session")
def small_data(small_cfg):
    return load_data(small_cfg)
