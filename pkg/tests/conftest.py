import numpy as np
import pytest

from spde_lab.grid_noise import make_grid

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (len(k), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def small_grid():
    return make_grid(0.05, 1.0, 50, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
