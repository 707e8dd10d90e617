import json
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--large", action="store_true", default=False,
                     help="run the trial-size 240 smoke check (about ten minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--large"):
        return
    skip = pytest.mark.skip(reason="needs --large")
    for item in items:
        if "large" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference():
    return json.loads((DATA / "reference_tables.json").read_text())


@pytest.fixture(scope="session")
def evaluators():
    """Lazily built ``DesignEvaluator`` per trial size, shared across modules."""
    from burnin_brar.oc import DesignEvaluator

    cache = {}

    def get(n, **kw):
        key = (n, tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = DesignEvaluator(n, **kw)
        return cache[key]

    return get
