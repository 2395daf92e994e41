import pytest

# one line per acceptance criterion, printed in the terminal summary
CRITERIA: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run the full-budget table reproductions (hours on one core)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="full-budget run; enable with --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
            mark = item.get_closest_marker("criterion")
            if mark is not None:
                n, name, budget = mark.args
                CRITERIA.append(f"criterion {n} {name}: SKIP (full run, {budget}; enable with --run-slow)")


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    """``record(n, name, passed, detail)`` logs one criterion line; ``passed=None`` is informational."""

    def _record(n, name, passed, detail):
        status = "INFO" if passed is None else ("PASS" if passed else "FAIL")
        line = f"criterion {n} {name}: {status} ({detail})"
        CRITERIA.append(line)
        print(line)

    return _record
