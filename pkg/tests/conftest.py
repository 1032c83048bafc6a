"""Shared test plumbing: the acceptance-criteria summary lines.

Each acceptance test registers exactly one pass/fail line; they are printed
in a dedicated section of the terminal summary so the verdicts stay visible
even though pytest captures in-test output.
"""

from __future__ import annotations

_CRITERION_LINES: dict[int, str] = {}


def record_criterion(number: int, description: str, passed: bool, seconds: float) -> None:
    verdict = "PASS" if passed else "FAIL"
    _CRITERION_LINES[number] = (
        f"criterion {number:2d}: {verdict}  ({seconds:7.2f}s)  {description}"
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERION_LINES):
        terminalreporter.write_line(_CRITERION_LINES[number])
