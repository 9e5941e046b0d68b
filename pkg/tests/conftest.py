import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trajsum.basisfn import BasisSpec, TimeGrid, make_basis

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GRID = TimeGrid.regular(0, 7)


@pytest.fixture
def grid():
    return GRID


@pytest.fixture
def quad_basis():
    return make_basis(BasisSpec.polynomial(2, (0, 7)))


@pytest.fixture
def spline_basis():
    return make_basis(BasisSpec.bspline((0, 7)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
