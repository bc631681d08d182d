"""Maximizer search, optimality conditions, the probe and the growth validators."""
import numpy as np
import pytest

from mvlevy.coefficients import catalog
from mvlevy.measures import DiscreteMeasure, WeightFunction
from mvlevy.pmp import (
    CERT_GAIN,
    coefficient_tau,
    first_order_check,
    flow_check,
    local_certificate,
    maximize_cylinder,
    pmp_probe,
    random_dw_function,
    second_order_check,
    tol_pmp,
    validate_conditions,
)
from mvlevy.testfn import BumpFunction, CylinderFunction, Polynomial


def unit_tau(X):
    return np.ones((len(X), 1, 1))


@pytest.fixture
def v_minus_v2(w2):
    """v - v^2 with v = <phi, mu> exp(-<w, mu>); v can reach 3/e > 1/2."""
    return CylinderFunction(Polynomial([(1.0, (1,)), (-1.0, (2,))]), [BumpFunction([0.0], 1.0, 3.0 * np.e)], w2)


@pytest.fixture(scope="module")
def v_minus_v2_max():
    f = CylinderFunction(Polynomial([(1.0, (1,)), (-1.0, (2,))]), [BumpFunction([0.0], 1.0, 3.0 * np.e)],
                         WeightFunction(2.0))
    return f, maximize_cylinder(f, K=4, restarts=4, seed=1)


# -- maximize_cylinder -------------------------------------------------------


def test_maximizer_reaches_half(v_minus_v2_max):
    f, cand = v_minus_v2_max
    v = f.derivative_structure(cand.mu)  # value is v - v^2, so v = 1/2 <=> value = 1/4
    assert cand.converged
    assert cand.value == pytest.approx(0.25, abs=1e-8)
    inner = CylinderFunction.linear(f.slots[0], f.w)(cand.mu)
    assert inner == pytest.approx(0.5, abs=1e-4)
    assert v.value == pytest.approx(cand.value, abs=1e-12)


def test_maximizer_value_matches_eval(v_minus_v2_max):
    f, cand = v_minus_v2_max
    assert abs(cand.value - f(cand.mu)) <= 1e-12
    assert local_certificate(f, cand.mu) <= CERT_GAIN


def test_nonpositive_function_max_is_zero(bump0, w2):
    f = CylinderFunction(Polynomial([(-1.0, (2,))]), [bump0], w2)
    cand = maximize_cylinder(f, K=3, restarts=3, seed=2)
    assert cand.value == pytest.approx(0.0, abs=1e-10)
    # the bump pairing vanishes: atoms sit outside (or at the rim of) the support
    assert CylinderFunction.linear(bump0, w2)(cand.mu) == pytest.approx(0.0, abs=1e-5)


def test_single_atom_maximizer_matches_grid_scan(bump0, w2):
    f = CylinderFunction.linear(BumpFunction([0.5], 1.5), w2)
    cand = maximize_cylinder(f, K=1, restarts=4, seed=0)
    grid = np.linspace(-1.5, 2.5, 40001).reshape(-1, 1)
    vals = f.slots[0](grid) * np.exp(-w2(grid))
    xstar = grid[np.argmax(vals), 0]
    assert cand.mu.n == 1
    assert cand.mu.locations[0, 0] == pytest.approx(xstar, abs=1e-3)
    assert cand.value == pytest.approx(vals.max(), rel=1e-7)


def test_maximizer_deterministic(v_minus_v2):
    a = maximize_cylinder(v_minus_v2, K=3, restarts=2, seed=5)
    b = maximize_cylinder(v_minus_v2, K=3, restarts=2, seed=5)
    assert a.mu == b.mu and a.value == b.value


def test_bad_atom_budget(v_minus_v2):
    with pytest.raises(ValueError):
        maximize_cylinder(v_minus_v2, K=0)


# -- first order -------------------------------------------------------------


def test_first_order_linear_at_argmax(bump0, w2):
    f = CylinderFunction.linear(bump0, w2, exp_weight=False)
    rep = first_order_check(f, DiscreteMeasure.dirac([0.0]))
    assert rep["slack"] <= rep["tol"]
    assert rep["slack"] == pytest.approx(0.0, abs=1e-15)


def test_first_order_at_maximizer(v_minus_v2_max):
    f, cand = v_minus_v2_max
    rep = first_order_check(f, cand.mu)
    assert rep["slack"] <= 1e-4 * rep["scale"]


def test_first_order_flags_perturbed_point(v_minus_v2_max):
    f, cand = v_minus_v2_max
    X = np.array(cand.mu.locations)
    X[0] += 0.6
    rep = first_order_check(f, DiscreteMeasure(X, cand.mu.weights))
    assert rep["slack"] > 0.01
    assert not rep["ok"]


# -- second order ------------------------------------------------------------


def test_second_order_degenerate_pair_is_zero(v_minus_v2_max):
    f, cand = v_minus_v2_max
    s = f.derivative_structure(cand.mu)
    P = f.basis(cand.mu.locations[:1])[0]
    G = P @ s.M @ P.T
    assert G[0, 0] + G[0, 0] - 2 * G[0, 0] == 0.0


def test_second_order_linear_is_zero(bump0, w2):
    f = CylinderFunction.linear(bump0, w2, exp_weight=False)
    mu = DiscreteMeasure([[0.0], [0.5], [-0.3]], [0.2, 0.5, 0.3])
    rep = second_order_check(f, mu)
    assert rep["max_pair"] == 0.0 and rep["max_combo"] == 0.0


def test_second_order_at_maximizer(v_minus_v2_max):
    f, cand = v_minus_v2_max
    rep = second_order_check(f, cand.mu)
    assert rep["worst"] <= rep["tol"]


# -- flow --------------------------------------------------------------------


def test_flow_zero_tau(v_minus_v2_max):
    f, cand = v_minus_v2_max
    rep = flow_check(f, cand.mu, lambda X: np.zeros((len(X), 1, 1)))
    assert rep["value"] == 0.0 and rep["oracle"] == 0.0


def test_flow_linear_at_argmax(bump0, w2):
    f = CylinderFunction.linear(bump0, w2, exp_weight=False)
    rep = flow_check(f, DiscreteMeasure.dirac([0.0]), unit_tau)
    assert rep["value"] == pytest.approx(bump0.hessian(np.zeros((1, 1)))[0, 0, 0])
    assert rep["value"] <= 0.0
    assert rep["agrees"]


def test_flow_at_maximizer(v_minus_v2_max):
    f, cand = v_minus_v2_max
    rep = flow_check(f, cand.mu, unit_tau)
    assert rep["agrees"]
    assert rep["value"] <= tol_pmp(cand.value)


def test_flow_oracle_agrees_off_maximum(rng, w2):
    for _ in range(10):
        f = random_dw_function(rng, 1, w2)
        mu = DiscreteMeasure(rng.normal(size=(3, 1)), rng.dirichlet(np.ones(3)))
        tau = coefficient_tau(catalog("tanh_mean_field"), mu)
        assert flow_check(f, mu, tau)["agrees"]


def test_slack_shrinks_with_iteration_cap(v_minus_v2):
    loose = maximize_cylinder(v_minus_v2, K=3, restarts=2, seed=3, maxiter=3, exchanges=0)
    tight = maximize_cylinder(v_minus_v2, K=3, restarts=2, seed=3, maxiter=300, exchanges=0)
    s_loose = first_order_check(v_minus_v2, loose.mu)["slack"]
    s_tight = first_order_check(v_minus_v2, tight.mu)["slack"]
    assert s_tight <= s_loose + 1e-12
    assert second_order_check(v_minus_v2, tight.mu)["worst"] <= second_order_check(v_minus_v2, loose.mu)["worst"] + 1e-9


# -- probe -------------------------------------------------------------------


def test_probe_zero_operator_passes():
    v = pmp_probe(catalog("zero"), trials=6, seed=0)
    assert v.status == "pass" and not v.witnesses


def test_probe_negative_killing_has_witness():
    v = pmp_probe(catalog("negative_killing"), trials=10, seed=0)
    assert v.status == "violation"
    for wt in v.witnesses:
        assert wt.f_value >= -1e-10
        assert wt.L_value > tol_pmp(wt.f_value)
        assert wt.L_value == pytest.approx(wt.f_value, rel=1e-12)


def test_probe_deterministic():
    a = pmp_probe(catalog("ou_mean_field"), trials=4, seed=9)
    b = pmp_probe(catalog("ou_mean_field"), trials=4, seed=9)
    assert a.to_json() == b.to_json()


def test_probe_workers_match_serial():
    a = pmp_probe(catalog("ou_mean_field"), trials=4, seed=9)
    b = pmp_probe(catalog("ou_mean_field"), trials=4, seed=9, workers=2)
    assert a.to_json() == b.to_json()


# -- growth conditions -------------------------------------------------------


def test_conditions_linear_drift_gamma0():
    rep = validate_conditions(catalog("affine", b1=-1.0, sigma=1.0, tau=1.0))
    assert rep["eq_ratio"]["gamma0"]
    assert rep["eq_ratio"]["gamma"] == 0.0
    assert rep["eq_ratio"]["c"] <= 2.0 + 1e-9
    assert rep["moment_gate"]


def test_conditions_cubic_drift_flagged():
    rep = validate_conditions(catalog("cubic_drift"))
    assert rep["eq_ratio"]["x_unbounded"]
    assert not rep["moment_gate"]
    assert rep["status"] == "fail"


def test_conditions_zero():
    rep = validate_conditions(catalog("zero"))
    assert rep["eq_ratio"]["c"] == 0.0 and rep["eq_ratio"]["gamma"] == 0.0
    assert rep["linear_growth"]["c"] == 0.0


def test_conditions_ou_supplies_constant(ou):
    rep = validate_conditions(ou)
    assert rep["moment_gate"]
    assert 0.0 < rep["C"] < 5.0
