"""Shared pytest plumbing: collect acceptance verdict lines and echo them.

The acceptance tests register one "<id>: PASS/FAIL" line each; printing them
from a terminal-summary hook keeps the lines visible in captured runs
(plain ``pytest -v``) instead of only under ``-s``.
"""

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
