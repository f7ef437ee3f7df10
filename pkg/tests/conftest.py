import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)``; printed as one line per criterion after the run."""

    def record(key, passed, detail):
        _VERDICTS[key] = (bool(passed), detail)
        print(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS):
        ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
