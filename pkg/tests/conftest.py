import numpy as np
import pytest

from trialadapt.trial import MatchedPair

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_pair(rng, nc=None, nt=None, shift=None):
    nc = int(rng.integers(5, 51)) if nc is None else nc
    nt = int(rng.integers(5, 51)) if nt is None else nt
    shift = rng.uniform(-1.0, 1.5) if shift is None else shift
    c = rng.normal(0.0, rng.uniform(0.5, 2.0), nc)
    t = rng.normal(shift, rng.uniform(0.5, 2.0), nt)
    return MatchedPair.from_outcomes(c, t)
