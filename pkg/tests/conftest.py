import pytest

_criteria: dict[object, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record an acceptance outcome: ``criterion(n, ok, detail)``."""

    def record(number, ok: bool, detail: str) -> None:
        _criteria[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=str):
        ok, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
