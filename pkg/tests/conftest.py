from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import bank_dataset, two_class_dataset, zero_shot_dataset  # noqa: E402

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criterion check")


@pytest.fixture
def bank_ds():
    return bank_dataset()


@pytest.fixture
def pair_ds():
    return two_class_dataset()


@pytest.fixture
def zero_ds():
    return zero_shot_dataset()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.get_closest_marker("acceptance"):
        label = item.get_closest_marker("acceptance").kwargs.get("label", item.name)
        _ACCEPTANCE_RESULTS.append((label, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label, outcome in _ACCEPTANCE_RESULTS:
        status = "PASS" if outcome == "PASSED" else outcome
        terminalreporter.write_line(f"{status}  {label}")
