import pytest

_ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 11


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def accept(request):
    """Record one acceptance criterion's outcome, then assert it."""
    table = request.config.stash[_ACCEPTANCE]

    def record(number: int, title: str, passed: bool, detail: str):
        table[number] = (title, bool(passed), detail)
        assert passed, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in table:
            title, passed, detail = table[n]
            terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {n:2d}. {title}: {detail}")
        else:
            terminalreporter.write_line(f"[FAIL] {n:2d}. not reached (test errored or was deselected)")
