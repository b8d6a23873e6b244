import numpy as np
import pytest

from evade import tensor as T


@pytest.fixture(autouse=True)
def _single_precision():
    T.set_precision("single")
    yield
    T.set_precision("single")


@pytest.fixture
def double():
    with T.precision("double"):
        yield


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a PASS/FAIL line for the end-of-session acceptance summary."""
    def record(label, passed, detail=""):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} {label}" + (f": {detail}" if detail else ""))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
