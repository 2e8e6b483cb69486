import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from isopyc.domain import Grid, SimParams

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def grid():
    return Grid(d=1, Nx=32, Nr=17)


@pytest.fixture
def params():
    return SimParams(epsilon=0.1, mu=0.25)


@pytest.fixture
def mesh(grid):
    return grid.mesh()


def bump(grid, k=1, n=1):
    """sin(n pi r) cos(k x): vanishes on both walls."""
    R, X = grid.mesh()
    return np.sin(n * np.pi * R) * np.cos(k * X)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria with runtime budgets")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import SUMMARY
    if SUMMARY:
        terminalreporter.section("acceptance criteria")
        for line in SUMMARY:
            terminalreporter.write_line(line)
