import numpy as np
import pytest

from tripletlab.batch import MiniBatch

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def b4():
    """P=2, K=1, D=2: id 0 visible (1,0), infrared (0,1); id 1 visible (-1,0), infrared (0,-1)."""
    return MiniBatch.from_grouped([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], 2, 1)


def random_batch(rng, P, K, D, scale=1.0):
    return MiniBatch.from_grouped(scale * rng.normal(size=(2 * P * K, D)), P, K)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
