import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dobrushin.operators import validate_markov  # noqa: E402
from dobrushin.spaces import classical  # noqa: E402


@pytest.fixture
def worked_pair():
    space = classical(2)
    T = validate_markov([[0.9, 0.2], [0.1, 0.8]], space)
    S = validate_markov([[0.88, 0.215], [0.12, 0.785]], space)
    return T, S


@pytest.fixture
def swap():
    return validate_markov([[0.0, 1.0], [1.0, 0.0]], classical(2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
