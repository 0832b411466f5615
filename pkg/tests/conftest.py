"""Shared fixtures.

The built-in scenarios take a few seconds each at dt = 1 ms, so every
scenario is integrated at most once per test session and the (config,
trajectory) pair is shared across test files through the ``scenario``
fixture.
"""

import numpy as np
import pytest

from platoonacc import RampPlateauPolicy, builtin_config, run_config

# Scenario constants reused by hand-computed oracles in the tests.
RING = dict(a=5.0, lam=7.1, gamma=19.0, g_max=0.26, k=2.0, L=43.0, n=4, p=0.26, M=0.1248)
OPEN = dict(a=5.0, lam=30.5, gamma=62.1, g_max=1.0, k=1.2)
# Same shape as OPEN but with the tail pulled in so the speed budget
# v_max < k (lam - a) holds (v_max = 25 < 30.6) and the barrier margin
# lam - a - v_max/k is positive.
OPEN_VALID = dict(a=5.0, lam=30.5, gamma=55.0, g_max=1.0, k=1.2)


@pytest.fixture(scope="session")
def scenario():
    """scenario(name) -> (config, trajectory); each name runs once per session."""
    cache = {}

    def get(name):
        if name not in cache:
            cfg = builtin_config(name)
            cache[name] = (cfg, run_config(cfg))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def ring_policy():
    return RampPlateauPolicy(a=RING["a"], lam=RING["lam"], gamma=RING["gamma"], g_max=RING["g_max"])


@pytest.fixture(scope="session")
def open_policy():
    return RampPlateauPolicy(a=OPEN["a"], lam=OPEN["lam"], gamma=OPEN["gamma"], g_max=OPEN["g_max"])


@pytest.fixture(scope="session")
def valid_open_policy():
    return RampPlateauPolicy(
        a=OPEN_VALID["a"], lam=OPEN_VALID["lam"], gamma=OPEN_VALID["gamma"], g_max=OPEN_VALID["g_max"]
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(20260825)
