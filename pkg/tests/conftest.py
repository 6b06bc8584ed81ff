import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, passed, detail)``."""

    def record(number, title, passed, detail=""):
        _CRITERIA[number] = (title, bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}: {detail}")
