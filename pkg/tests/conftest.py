import numpy as np
import pytest

from faultstab.geometry import FaultParams, observation_grid, sine_basis
from faultstab.operators import ForwardSetup

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES.append((number, "PASS" if passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_setup():
    """Cheap operator setup: 4x4 modes, 9x9 grid, coarse source rule."""
    return ForwardSetup(sine_basis(4), observation_grid(9), quad_order=6, cells=4)


@pytest.fixture(scope="session")
def m_mid():
    return FaultParams(0.03, -0.02, -30.0)
