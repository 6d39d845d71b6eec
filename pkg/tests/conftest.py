from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# (criterion number, one-line verdict) recorded by tests/test_acceptance.py
ACCEPTANCE: list[tuple[int, str]] = []


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
