"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)_")
_results = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None:
        return
    number = int(m.group(1))
    detail = dict(report.user_properties).get("detail", "")
    if report.failed:
        _results[number] = ("FAIL", detail or report.when)
    elif report.when == "call" and number not in _results:
        _results[number] = ("PASS" if report.passed else report.outcome.upper(), detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, detail = _results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}".rstrip())
