"""Shared pytest hooks.

The acceptance tests record one verdict line each; printing them together
after the run gives a compact pass/fail table with the measured values
next to their pinned tolerances.
"""

_verdicts = []


def record_verdict(line: str) -> None:
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.write_sep("-", "acceptance summary")
        for line in _verdicts:
            terminalreporter.write_line(line)
