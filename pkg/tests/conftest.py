import pytest

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion's outcome for the summary."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(n, ok, detail):
        line = f"acceptance {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        results[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
