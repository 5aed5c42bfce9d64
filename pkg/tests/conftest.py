import json
from pathlib import Path

import numpy as np
import pytest

from photoeffect import Coulomb, Cutoff, RadialWindow, default_grid, ground_state, make_pulse

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


@pytest.fixture(scope="session")
def hydrogen():
    return Coulomb(1.0)


@pytest.fixture(scope="session")
def hgrid(hydrogen):
    grid = default_grid(hydrogen)
    ground_state(hydrogen, grid)
    return grid


@pytest.fixture(scope="session")
def kappa():
    return Cutoff(10.0)


@pytest.fixture(scope="session")
def bump_pulse():
    return make_pulse(RadialWindow(0.45, 0.55), [0.0, 0.0, 1.0])


@pytest.fixture(scope="session")
def c2_pulse():
    return make_pulse(RadialWindow(0.4, 0.8, smoothness=2), [1.0, 0.0, 0.0])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
