import pytest

ACCEPTANCE_COUNT = 9
_acceptance = {}


@pytest.fixture
def record_acceptance():
    """Store one acceptance outcome; the summary prints them after the run."""

    def record(number, ok, detail):
        _acceptance[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        if n in _acceptance:
            ok, detail = _acceptance[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  not run")
