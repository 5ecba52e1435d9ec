import pytest

from fastslow import preset


@pytest.fixture(scope="session")
def doubling():
    return preset("doubling-cos")


@pytest.fixture(scope="session")
def perturbed():
    return preset("perturbed-doubling")


@pytest.fixture(scope="session")
def coboundary():
    return preset("coboundary-control")


_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one PASS/FAIL line for the run summary and fail the test when it fails."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
