"""Shared pytest hooks.

Acceptance tests push their per-criterion verdict lines here; echoing them
from the terminal-summary hook keeps them visible under default output
capture.
"""

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)
