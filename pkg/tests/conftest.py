"""Collects the acceptance verdicts and prints them at the end of the run."""

import pytest

VERDICTS = []


def record(name: str, passed: bool, detail: str) -> None:
    VERDICTS.append((name, passed, detail))


@pytest.fixture
def verdict():
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
