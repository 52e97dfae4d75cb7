"""Shared fixtures and the acceptance summary printed after the run."""
import numpy as np
import pytest

ACCEPTANCE = {}


def record(number, title, passed, detail):
    """Store one acceptance outcome for the terminal summary."""
    ACCEPTANCE[number] = (title, bool(passed), detail)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number:2d} {title}: {detail}")
