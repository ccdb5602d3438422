import functools

import pytest

from mramsim.devices import MtjState
from mramsim.variation import run_ensemble


@functools.lru_cache(maxsize=None)
def _ensemble(design_id, state, spec, start=0, stop=None):
    return run_ensemble(design_id, MtjState(state), spec, start=start, stop=stop)


@pytest.fixture(scope="session")
def ensemble():
    """Monte Carlo runs shared across test modules; ensembles are pure
    functions of their arguments, so caching them is safe."""
    return _ensemble


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
