import pytest

_VERDICTS = pytest.StashKey[dict]()
N_CRITERIA = 12


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def verdict(request):
    """Record the pass/fail line for one acceptance criterion, then assert it."""
    table = request.config.stash[_VERDICTS]

    def record(number: int, ok: bool, detail: str):
        table[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash[_VERDICTS]
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in table:
            ok, detail = table[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN  (deselected, or errored before its verdict)")
