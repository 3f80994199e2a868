import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fragstat import binary_uniform, derive_pi, stationary_eta
from fragstat.streams import block_rng

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def uniform_law():
    return binary_uniform(0.25)


@pytest.fixture(scope="session")
def pi(uniform_law):
    return derive_pi(uniform_law)


@pytest.fixture(scope="session")
def eta(pi):
    return stationary_eta(pi)


@pytest.fixture
def rng(request):
    # one fixed stream per test, keyed by its name
    return block_rng(12345, request.node.name, 0)


def pytest_configure(config):
    np.seterr(over="ignore")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
