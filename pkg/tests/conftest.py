"""Shared acceptance reporting.

Acceptance tests register one verdict line per criterion through the
criterion_report fixture; the terminal summary prints them as a block so a
plain pytest run shows PASS/FAIL per criterion at a glance.
"""

import pytest

_LINES: list[str] = []


class _Reporter:
    def record(self, criterion: str, passed: bool, detail: str = "") -> None:
        verdict = "PASS" if passed else "FAIL"
        line = f"[{verdict}] {criterion}"
        if detail:
            line += f": {detail}"
        _LINES.append(line)


@pytest.fixture(scope="session")
def criterion_report():
    return _Reporter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES:
        terminalreporter.write_line(line)
