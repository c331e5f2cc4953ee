"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

import pytest

_criteria: dict[str, str] = {}


def criterion(label):
    def mark(fn):
        fn.criterion = label
        return fn
    return mark


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = getattr(getattr(item, "function", None), "criterion", None)
    if label is None:
        return
    if rep.failed:
        _criteria[label] = "FAIL"
    elif rep.when == "call" and _criteria.get(label) != "FAIL":
        _criteria[label] = "PASS" if rep.passed else "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label in sorted(_criteria):
        terminalreporter.write_line(f"{_criteria[label]}  {label}")
