"""Compiled and pure-Python kernels agree, and the backend switch is scoped."""
import numpy as np
import pytest

from mvlevy import kernels
from mvlevy.coefficients import catalog
from mvlevy.generator import apply_L
from mvlevy.measures import WeightFunction
from mvlevy.testfn import random_cylinder
from conftest import random_probability

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(), reason="extension not built")


def both(fn, *args):
    with kernels.use_backend("python"):
        a = fn(*args)
    with kernels.use_backend("compiled"):
        b = fn(*args)
    return a, b


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_use_backend_restores():
    before = kernels.backend_name()
    with kernels.use_backend("python"):
        assert kernels.backend_name() == "python"
    assert kernels.backend_name() == before


def test_sqdiff_brute_force_matches_python():
    rng = np.random.default_rng(0)
    n, m, d = 7, 3, 2
    a, X, P = rng.random(n), rng.normal(size=(n, d)), rng.normal(size=(n, m))
    M = rng.normal(size=(m, m))
    M = M + M.T
    expected = sum(a[i] * a[j] * 0.7 * np.exp(-np.sum((X[i] - X[j]) ** 2) / (2 * 1.3 ** 2))
                   * (P[i] - P[j]) @ M @ (P[i] - P[j]) for i in range(n) for j in range(n))
    with kernels.use_backend("python"):
        got = kernels.sqdiff_pair_sum(a, X, P, P @ M, kernels.ALPHA_GAUSSIAN, 0.7, 1.3)
    assert got == pytest.approx(expected, rel=1e-12)


@compiled
@pytest.mark.parametrize("p", [0.5, 2.0, 3.0])
@pytest.mark.parametrize("d", [1, 3])
def test_weight_parity(p, d):
    X = np.random.default_rng(1).normal(size=(500, d)) * 2.0
    a, b = both(kernels.weight_eval, X, p, 2)
    for u, v in zip(a, b):
        # entries can cancel, so the absolute floor follows the array scale
        np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-14 * max(1.0, np.abs(v).max()))


@compiled
@pytest.mark.parametrize("d", [1, 2])
def test_bump_parity(d):
    X = np.random.default_rng(2).normal(size=(500, d))
    a, b = both(kernels.bump_eval, X, np.full(d, 0.1), 1.2, np.e, 2)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)


@compiled
@pytest.mark.parametrize("kind", [kernels.ALPHA_CONSTANT, kernels.ALPHA_GAUSSIAN])
def test_sqdiff_parity(kind):
    rng = np.random.default_rng(3)
    n, m = 1100, 4  # crosses the block boundary
    a, X, P = rng.random(n) / n, rng.normal(size=(n, 2)), rng.normal(size=(n, m))
    M = rng.normal(size=(m, m))
    M = M + M.T
    x, y = both(kernels.sqdiff_pair_sum, a, X, P, P @ M, kind, 0.5, 1.0)
    assert x == pytest.approx(y, rel=1e-11)


@compiled
def test_generator_parity_across_backends(rng):
    cs = catalog("sqdiff_gaussian")
    w = WeightFunction(2.0)
    for _ in range(5):
        f = random_cylinder(rng, 1, w, "D_w")
        mu = random_probability(rng, n=6)
        x, y = both(lambda: apply_L(cs, mu, f).value)
        assert x == pytest.approx(y, rel=1e-10, abs=1e-14)
