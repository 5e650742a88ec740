import numpy as np
import pytest

from samplewise_rnnt.tensor import AllocationTracker, use_tracker

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def tracker():
    """Fresh tracker that receives every allocation made during the test."""
    tr = AllocationTracker()
    with use_tracker(tr):
        yield tr


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
