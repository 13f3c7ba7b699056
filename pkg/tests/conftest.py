import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from randcert import CHSH_SCENARIO, Behavior

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TSIRELSON_G = (2 + math.sqrt(2)) / 8


def tsirelson_table() -> np.ndarray:
    """Analytic statistics at maximal CHSH violation: P(ab|xy) = (1 + (-1)^(a+b+xy)/sqrt2) / 4."""
    P = np.empty((2, 2, 2, 2))
    for a, b, x, y in np.ndindex(2, 2, 2, 2):
        P[a, b, x, y] = (1 + (-1) ** (a + b + x * y) / math.sqrt(2)) / 4
    return P


@pytest.fixture
def tsirelson():
    return Behavior(CHSH_SCENARIO, tsirelson_table())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record a PASS/FAIL line for an acceptance criterion and assert it."""
    def record(number, name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {name} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
