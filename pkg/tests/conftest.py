"""Collects the one-line acceptance verdicts and prints them after the run."""

import pytest

_LINES = []


@pytest.fixture
def verdict():
    """``verdict(label, ok, detail)`` records and prints one PASS/FAIL line."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} - {detail}"
        _LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
