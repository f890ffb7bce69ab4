import numpy as np
import pytest

from mnss import synth
from mnss.core import NormSpec

ALL_SPECS = [NormSpec(i, o, a) for i in (1, 2, np.inf) for o in (1, 2, np.inf) for a in (True, False)]


@pytest.fixture(scope="session")
def seed1_bundles():
    """600 streamlines in 12 bundles, seed 1."""
    recipe = synth.brain_recipe(600, n_bundles=12, seed=1)
    return synth.generate(recipe)


@pytest.fixture(scope="session")
def seed1_rows(seed1_bundles):
    tg, _ = seed1_bundles
    return synth.oracle_rows(tg, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _VERDICTS[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
