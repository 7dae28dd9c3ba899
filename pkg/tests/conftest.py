import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kelsim import ModelParams, make_grid
from kelsim.grid import integrate

settings.register_profile(
    "kelsim", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("kelsim")


def bump(s):
    """exp(1 - 1/(1 - s^2)) on |s| < 1, zero outside."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1
    ss = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - ss**2)), 0.0)


@pytest.fixture
def grid2():
    return make_grid(2, 4.0, 32)


@pytest.fixture
def coupled_params():
    return ModelParams(m=2, q=2, gamma=1.0, delta=0, chi=1)


def random_density(rng, grid, support=0.5):
    """Nonnegative random field supported in |x_d| < support * L."""
    u = rng.random(grid.shape)
    for d in range(grid.n):
        shape = [1] * grid.n
        shape[d] = grid.N
        u = u * (np.abs(grid.centers()) < support * grid.L).reshape(shape)
    return u


def mass(u, grid):
    return integrate(u, grid)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def record(number, name, passed, detail):
        ACCEPTANCE_LINES.append((number, f"{'PASS' if passed else 'FAIL'} [{number:2d}] {name}: {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
