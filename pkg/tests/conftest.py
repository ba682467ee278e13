import numpy as np
import pytest

from lightray.forward import assemble_operator, enumerate_rays
from lightray.grid import build_grid


@pytest.fixture(scope="session")
def desk_grid():
    return build_grid(25, (-3.0, 3.0), 10, (0.0, 4.0))


@pytest.fixture(scope="session")
def desk_operator(desk_grid):
    return assemble_operator(desk_grid, enumerate_rays(desk_grid))


@pytest.fixture(scope="session")
def tiny_grid():
    """3x3 nodes on [-1, 1]^2, one plane at t = 0.5."""
    return build_grid(3, (-1.0, 1.0), 1, (0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
