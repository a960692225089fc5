import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distsm import GramCache, StateKernelSpec, build_ppi, make_env
from distsm.transport import CostMatrix

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ENV_NAMES = ("three_state_c1", "uniform_three", "t_maze", "windy_grid", "chain")


def discounted(name, gamma, **params):
    mdp, policy = make_env(name, params)
    return build_ppi(mdp, policy, gamma)


def kernels(dm):
    return GramCache.build(StateKernelSpec(), dm.embedding), CostMatrix.from_embedding(dm.embedding)


def random_simplex(rng, *shape):
    x = rng.exponential(size=shape)
    return x / x.sum(axis=-1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def c1():
    return discounted("three_state_c1", 0.7)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in module.summary_lines():
        terminalreporter.write_line(line)
