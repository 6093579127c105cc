import pytest

CRITERIA = range(1, 10)
_lines = pytest.StashKey[dict]()


@pytest.fixture
def record_criterion(request):
    """``record(n, ok, detail)`` stores the verdict printed at the end of the session."""
    store = request.config.stash.setdefault(_lines, {})

    def record(number, ok, detail):
        store[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(store[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_lines, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        terminalreporter.write_line(store.get(n, f"criterion {n}: NOT RUN (deselected or errored before recording)"))
