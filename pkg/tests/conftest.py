"""Shared reporting for the acceptance suite.

Each acceptance test records a single PASS/FAIL line; they are replayed in
the terminal summary so the verdicts are visible even when output capture
would otherwise swallow them.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
