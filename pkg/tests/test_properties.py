"""Property-based checks of the structural invariants."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mvlevy.coefficients import catalog
from mvlevy.generator import apply_L
from mvlevy.measures import DiscreteMeasure, WeightedMeasure, WeightFunction, bl_distance, embed, integrate
from mvlevy.testfn import BumpFunction, CylinderFunction, random_cylinder

coord = st.floats(-6.0, 6.0, allow_nan=False)
seeds = st.integers(0, 2 ** 32 - 1)
exponents = st.floats(0.5, 4.0)


@st.composite
def probabilities(draw, d=1, max_atoms=5):
    n = draw(st.integers(1, max_atoms))
    locs = draw(st.lists(st.lists(coord, min_size=d, max_size=d), min_size=n, max_size=n))
    raw = draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n))
    wts = np.array(raw) / np.sum(raw)
    return DiscreteMeasure(locs, wts)


@settings(max_examples=60, deadline=None)
@given(probabilities(d=2), exponents)
def test_embedding_pairs_inverse_weight_to_one(mu, p):
    w = WeightFunction(p)
    nu = embed(mu, w)
    assert abs(nu.pair(lambda X: 1.0 / w(X)) - 1.0) <= 1e-12
    assert np.all(nu.weights >= mu.weights * (1 - 1e-15))


@settings(max_examples=60, deadline=None)
@given(probabilities(), st.floats(-3, 3), st.floats(-3, 3))
def test_integrate_is_linear(mu, a, b):
    f = lambda X: np.sin(X[:, 0])
    g = lambda X: X[:, 0] ** 2
    lhs = integrate(lambda X: a * f(X) + b * g(X), mu)
    rhs = a * integrate(f, mu) + b * integrate(g, mu)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 40


@settings(max_examples=40, deadline=None)
@given(seeds, probabilities(), coord, coord)
def test_second_derivative_is_symmetric(seed, mu, x, y):
    rng = np.random.default_rng(seed)
    f = random_cylinder(rng, 1, WeightFunction(2.0), "D_w")
    a, b = f.d2(mu, [x], [y]), f.d2(mu, [y], [x])
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@settings(max_examples=40, deadline=None)
@given(seeds, probabilities(), coord)
def test_first_derivative_of_linear_ew_is_slot(seed, mu, x):
    phi = BumpFunction([float(np.random.default_rng(seed).normal())], 1.5)
    f = CylinderFunction.linear(phi, WeightFunction(2.0), exp_weight=False)
    assert f.d1(mu, [x]) == phi(np.array([[x]]))[0]


@settings(max_examples=30, deadline=None)
@given(seeds, probabilities(), st.floats(-2, 2), st.floats(-2, 2),
       st.sampled_from(["ou_mean_field", "tanh_mean_field", "common_shift_jump", "sqdiff_constant"]))
def test_generator_is_linear(seed, mu, a, b, name):
    rng = np.random.default_rng(seed)
    w = WeightFunction(2.0)
    f, g = random_cylinder(rng, 1, w, "D_w"), random_cylinder(rng, 1, w, "D_w")
    cs = catalog(name)
    rf, rg = apply_L(cs, mu, f), apply_L(cs, mu, g)
    lhs = apply_L(cs, mu, f.scaled(a) + g.scaled(b)).value
    scale = max(1.0, rf.magnitude, rg.magnitude) * (1 + abs(a) + abs(b))
    assert abs(lhs - (a * rf.value + b * rg.value)) <= 1e-10 * scale


@settings(max_examples=30, deadline=None)
@given(seeds, probabilities(), st.floats(0.0, 3.0))
def test_killing_scales_value(seed, mu, kappa):
    f = random_cylinder(np.random.default_rng(seed), 1, WeightFunction(2.0), "D_w")
    rep = apply_L(catalog("pure_killing", kappa=kappa), mu, f)
    assert rep.value == -kappa * f(mu)


@settings(max_examples=30, deadline=None)
@given(st.lists(coord, min_size=1, max_size=4), st.lists(coord, min_size=1, max_size=4))
def test_bl_distance_symmetric_and_bounded(xs, ys):
    a = WeightedMeasure(np.array(xs)[:, None], np.ones(len(xs)) / len(xs))
    b = WeightedMeasure(np.array(ys)[:, None], np.ones(len(ys)) / len(ys))
    dab, dba = bl_distance(a, b), bl_distance(b, a)
    assert abs(dab - dba) <= 1e-9
    # a probability pair is at most 2 apart in the bounded-Lipschitz norm
    assert -1e-12 <= dab <= 2.0 + 1e-9


@settings(max_examples=40, deadline=None)
@given(probabilities(d=2))
def test_measure_json_round_trip(mu):
    assert DiscreteMeasure.from_json(mu.to_json()) == mu
