"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

VERDICTS = {}


@pytest.fixture
def verdict():
    def record(number, title, ok, detail=""):
        VERDICTS[number] = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        print(VERDICTS[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
