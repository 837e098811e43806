"""Collects acceptance-criterion outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = _results.setdefault(number, {"title": title, "passed": True, "details": []})
        entry["passed"] &= report.passed
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]
        if not report.passed:
            entry["details"].append(f"{item.name} {report.outcome}")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} {status}: {entry['title']}")
        for d in entry["details"]:
            terminalreporter.write_line(f"    {d}")
