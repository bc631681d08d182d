import numpy as np
import pytest

from mvlevy.coefficients import catalog
from mvlevy.measures import DiscreteMeasure, WeightFunction
from mvlevy.testfn import BumpFunction, CylinderFunction


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def w1():
    return WeightFunction(1.0)


@pytest.fixture
def w2():
    return WeightFunction(2.0)


@pytest.fixture
def bump0():
    """Unit bump at the origin with peak value 1."""
    return BumpFunction([0.0])


@pytest.fixture
def ou():
    return catalog("ou_mean_field")


@pytest.fixture
def dw_linear(bump0, w2):
    """<phi, mu> exp(-<w, mu>) with phi the unit bump."""
    return CylinderFunction.linear(bump0, w2)


@pytest.fixture
def two_atoms():
    return DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])


def random_probability(rng, n=None, d=1, spread=1.5):
    n = int(rng.integers(1, 7)) if n is None else n
    return DiscreteMeasure(rng.normal(size=(n, d)) * spread, rng.dirichlet(np.ones(n)))


# acceptance summary: one line per criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
