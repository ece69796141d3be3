import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def report(number: int, ok: bool, detail: str, soft: bool = False) -> None:
        tag = "PASS" if ok else ("WARN" if soft else "FAIL")
        line = f"[{tag}] criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
