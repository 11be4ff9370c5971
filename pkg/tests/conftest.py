import time
import warnings

import numpy as np
import pytest

from atd.solver import ClampWarning


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def quiet_clamps():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClampWarning)
        yield


_CRITERIA: dict[int, str] = {}


class _Criterion:
    def __init__(self, number: int, title: str, budget: float):
        self.number, self.title, self.budget = number, title, budget
        self.detail = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        ok = exc_type is None and elapsed <= self.budget
        line = (f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}  {self.title}"
                f"  [{elapsed:.1f}s / {self.budget:.0f}s]  {self.detail}")
        _CRITERIA[self.number] = line
        print(line)
        if exc_type is None and not ok:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, "
                                 f"budget {self.budget:.0f}s")
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
