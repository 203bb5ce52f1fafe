"""Shared pytest hooks: acceptance criteria report one pass/fail line each."""
import pytest

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records the outcome, then fails the test if ``ok`` is false."""
    def record(n: str, ok: bool, detail: str = ""):
        ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"acceptance criterion {n} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
