import warnings

import pytest

from driftlab.assembly import PecletWarning


@pytest.fixture(autouse=True)
def _quiet_peclet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PecletWarning)
        yield


ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Log one acceptance line; the terminal summary prints them all."""
    def _record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
