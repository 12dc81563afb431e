"""Shared test configuration.

Prints one PASS/FAIL line per acceptance criterion at the end of the run,
based on the outcomes of tests/test_acceptance.py::test_criterion_NN.
"""

import re

import pytest

_CRITERION = re.compile(r"test_acceptance.*::test_criterion_(\d+)")
_results: dict[int, str] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.failed:
        _results[num] = "FAIL"
    elif report.skipped:
        _results.setdefault(num, "SKIP")
    elif report.when == "call" and report.passed:
        _results.setdefault(num, "PASS")


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_results):
        terminalreporter.write_line(f"[criterion {num}] {_results[num]}")
