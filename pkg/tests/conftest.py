import numpy as np
import pytest

from airsea.scenario import table_one


@pytest.fixture
def scenario():
    return table_one([[150.0, 150.0]])


@pytest.fixture
def sp(scenario):
    return scenario.system


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in order."""
    import sys

    mod = sys.modules.get("test_acceptance")
    report = getattr(mod, "REPORT", None)
    if not report:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(report):
        ok, detail = report[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
