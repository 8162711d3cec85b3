import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_FILE = "test_acceptance.py"

# outcome and duration of every non-acceptance test in this session
PROPERTY_REPORTS = {}
ACCEPTANCE_LINES = []
SESSION = {"start": None, "property_items": 0}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def property_session():
    return SESSION, PROPERTY_REPORTS


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return report


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(items):
    # acceptance runs last so it can read how the property suite went
    items.sort(key=lambda item: item.fspath.basename == ACCEPTANCE_FILE)
    SESSION["property_items"] = sum(item.fspath.basename != ACCEPTANCE_FILE for item in items)


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE in report.nodeid:
        return
    entry = PROPERTY_REPORTS.setdefault(report.nodeid, {"passed": True, "seconds": 0.0})
    entry["seconds"] += report.duration
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
