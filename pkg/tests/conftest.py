import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nestedavg.core import Box, NoiseSpec
from nestedavg.problems import make_quadratic_free_chain, make_tanh_chain

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tanh3():
    return make_tanh_chain(3, [8, 8, 8], 1, noise=NoiseSpec(0.1, 0.1))


@pytest.fixture(scope="session")
def tanh3_box():
    return make_tanh_chain(3, [8, 8, 8], 1, feasible_set=Box(-0.1, 0.1, dim=8), noise=NoiseSpec(0.1, 0.1))


@pytest.fixture(scope="session")
def quad3():
    return make_quadratic_free_chain(3, [6, 5, 4], 0)
