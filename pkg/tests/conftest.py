import math

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def zscore(mean, se, ref):
    return abs(mean - ref) / se if se > 0 else (0.0 if mean == ref else math.inf)


CRITERIA = {}


@pytest.fixture
def report():
    """Record one acceptance line: report(number, passed, detail)."""

    def record(n, passed, detail):
        line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        CRITERIA[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
