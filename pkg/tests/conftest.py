"""Repeat the acceptance criterion lines after the run.

Per-test prints are captured by pytest and only shown on failure; the
criterion summary is worth seeing when everything passes too, so echo it
into the terminal summary where capture does not apply.
"""

import sys


def pytest_terminal_summary(terminalreporter):
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    lines = getattr(mod, "CRITERION_LINES", []) if mod else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for text in lines:
            terminalreporter.line(text)
