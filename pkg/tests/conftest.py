import numpy as np
import pytest

ACCEPTANCE = []


class AcceptanceRecorder:
    """Collects one verdict line per acceptance criterion."""

    def __call__(self, name, passed, detail):
        ACCEPTANCE.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()
