import numpy as np
import pytest

_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    item_id = report.nodeid
    if "test_acceptance" in item_id:
        _ACCEPTANCE_RESULTS[item_id] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for item_id in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[item_id]
        name = item_id.split("::")[-1]
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{status:>6}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
