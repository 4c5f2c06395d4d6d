"""Shared pytest wiring: a summary line per acceptance check.

Tests marked ``@pytest.mark.acceptance("<name>")`` get one line each in the
terminal summary, so the acceptance status is readable without scrolling
through the full test listing.
"""

import pytest

_outcomes: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(name): an end-to-end acceptance check, reported by name",
    )


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.failed):
        marker_name = getattr(report, "_acceptance_name", None)
        if marker_name is not None:
            status = "PASSED" if report.passed else "FAILED"
            previous = _outcomes.get(marker_name)
            if previous != "FAILED":
                _outcomes[marker_name] = status


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and marker.args:
        report._acceptance_name = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.write_sep("-", "acceptance checks")
    for name, status in _outcomes.items():
        terminalreporter.write_line(f"[acceptance] {name}: {status}")
