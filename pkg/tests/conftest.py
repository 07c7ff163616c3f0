"""Shared pytest plumbing: one summary line per acceptance criterion."""
import re

ACCEPTANCE = {}


def record(criterion: int, ok: bool, detail: str):
    """Store the outcome of an acceptance criterion for the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        detail = re.sub(r"\s+", " ", detail)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
