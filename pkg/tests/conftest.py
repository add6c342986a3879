import pytest

# (criterion number, title, passed, detail) appended by tests/test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda row: row[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance verdict, then assert it."""

    def check(num, title, ok, detail):
        ACCEPTANCE.append((num, title, bool(ok), detail))
        assert ok, f"criterion {num} ({title}) failed: {detail}"

    return check
