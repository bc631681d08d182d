"""Cylinder test functions on measures and their measure derivatives.

A cylinder function is ``f(mu) = p(v_1, ..., v_n)`` with
``v_i = <phi_i, mu> * E`` where ``E = exp(-<w, mu>)`` when ``exp_weight`` is set
and ``E = 1`` otherwise. The inner functions ``phi_i`` are bumps, the weight w,
or the constant one.

All derivatives are linear combinations of a small basis of spatial functions
(the slots, plus w when the exponential factor is on)::

    d1(x)    = sum_k alpha_k psi_k(x)
    d2(x, y) = sum_kl M_kl psi_k(x) psi_l(y)

so the coefficient vector ``alpha`` and the symmetric matrix ``M`` computed by
:meth:`CylinderFunction.derivative_structure` carry everything the generator
needs. Spatial gradients of ``d1`` come from the basis gradients for free.
"""
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np

from . import kernels
from .measures import DiscreteMeasure, WeightFunction, _as_points


# ----------------------------------------------------------------------------
# inner functions


class BumpFunction:
    r"""Smooth bump ``scale * exp(-1 / (1 - |x-c|^2 / r^2))`` on the open ball.

    Vanishes with all derivatives outside the ball. ``scale = e`` gives
    peak value 1 at the center.
    """

    kind = "bump"

    def __init__(self, center, radius=1.0, scale=np.e):
        self.center = np.atleast_1d(np.asarray(center, dtype=float)).copy()
        self.center.setflags(write=False)
        self.radius = float(radius)
        self.scale = float(scale)
        if not self.radius > 0:
            raise ValueError("bump radius must be positive")
        if not np.all(np.isfinite(self.center)) or not np.isfinite(self.scale):
            raise ValueError("bump parameters must be finite")

    @property
    def d(self):
        return self.center.shape[0]

    def evaluate(self, X, order=0):
        return kernels.bump_eval(_as_points(X, self.d), self.center, self.radius, self.scale, order)

    def __call__(self, X):
        return self.evaluate(X)[0]

    def gradient(self, X):
        return self.evaluate(X, 1)[1]

    def hessian(self, X):
        return self.evaluate(X, 2)[2]

    def peak(self):
        return self.scale * np.exp(-1.0)

    def to_json(self):
        return {"kind": "bump", "center": self.center.tolist(), "radius": self.radius, "scale": self.scale}

    def __repr__(self):
        return f"BumpFunction(center={self.center.tolist()}, radius={self.radius}, scale={self.scale:.6g})"


class OneFunction:
    """The constant function 1."""

    kind = "one"

    def evaluate(self, X, order=0):
        X = _as_points(X)
        n, d = X.shape
        grad = np.zeros((n, d)) if order >= 1 else None
        hess = np.zeros((n, d, d)) if order >= 2 else None
        return np.ones(n), grad, hess

    def __call__(self, X):
        return self.evaluate(X)[0]

    def to_json(self):
        return {"kind": "one"}

    def __repr__(self):
        return "OneFunction()"


class WeightSlot:
    """The weight function used as an inner function."""

    kind = "weight"

    def __init__(self, w):
        self.w = w

    def evaluate(self, X, order=0):
        return self.w.evaluate(X, order)

    def __call__(self, X):
        return self.w(X)

    def to_json(self):
        return {"kind": "weight"}

    def __repr__(self):
        return "WeightSlot()"


# ----------------------------------------------------------------------------
# outer functions


class Polynomial:
    """Sparse polynomial: list of ``(coefficient, multi_index)`` terms."""

    kind = "polynomial"

    def __init__(self, terms, nvars=None):
        cleaned = []
        for coef, idx in terms:
            idx = tuple(int(k) for k in idx)
            if any(k < 0 for k in idx):
                raise ValueError("multi-index entries must be nonnegative")
            cleaned.append((float(coef), idx))
        if nvars is None:
            nvars = len(cleaned[0][1]) if cleaned else 0
        for _, idx in cleaned:
            if len(idx) != nvars:
                raise ValueError(f"multi-index {idx} does not have {nvars} entries")
        self.nvars = nvars
        self.terms = cleaned
        self._coef = np.array([c for c, _ in cleaned])
        self._exp = np.array([idx for _, idx in cleaned], dtype=int).reshape(len(cleaned), nvars)

    @classmethod
    def linear(cls, coefs):
        n = len(coefs)
        return cls([(c, tuple(int(i == k) for i in range(n))) for k, c in enumerate(coefs)], n)

    def _powers(self, v, shift):
        # v_i^(e_i - shift_i), zero where the exponent would be negative
        e = self._exp - shift
        out = np.where(e >= 0, np.power(v[None, :], np.maximum(e, 0)), 0.0)
        return np.prod(out, axis=1)

    def value(self, v):
        v = np.asarray(v, dtype=float)
        if not self.terms:
            return 0.0
        return float(self._coef @ self._powers(v, 0))

    def gradient(self, v):
        v = np.asarray(v, dtype=float)
        g = np.zeros(self.nvars)
        for i in range(self.nvars):
            shift = np.zeros(self.nvars, dtype=int)
            shift[i] = 1
            g[i] = self._coef @ (self._exp[:, i] * self._powers(v, shift)) if self.terms else 0.0
        return g

    def hessian(self, v):
        v = np.asarray(v, dtype=float)
        n = self.nvars
        H = np.zeros((n, n))
        if not self.terms:
            return H
        for i in range(n):
            for j in range(i, n):
                shift = np.zeros(n, dtype=int)
                shift[i] += 1
                shift[j] += 1
                if i == j:
                    mult = self._exp[:, i] * (self._exp[:, i] - 1)
                else:
                    mult = self._exp[:, i] * self._exp[:, j]
                H[i, j] = H[j, i] = self._coef @ (mult * self._powers(v, shift))
        return H

    def at_zero(self):
        return self.value(np.zeros(self.nvars))

    def degree(self):
        return int(self._exp.sum(axis=1).max()) if self.terms else 0

    def scaled(self, s):
        return Polynomial([(s * c, idx) for c, idx in self.terms], self.nvars)

    def padded(self, before, after):
        return Polynomial([(c, (0,) * before + idx + (0,) * after) for c, idx in self.terms], before + self.nvars + after)

    def __mul__(self, other):
        terms = [(c1 * c2, i1 + i2) for (c1, i1), (c2, i2) in iproduct(self.terms, other.terms)]
        return Polynomial(terms, self.nvars + other.nvars)

    def to_json(self):
        return {"kind": "polynomial", "terms": [[c, list(idx)] for c, idx in self.terms]}

    def __repr__(self):
        return f"Polynomial({self.terms})"


def _smoothstep(u):
    u = min(max(u, 0.0), 1.0)
    u2 = u * u
    return (
        u2 * u * (10.0 - 15.0 * u + 6.0 * u2),
        30.0 * u2 * (1.0 - 2.0 * u + u2),
        60.0 * u * (1.0 - 3.0 * u + 2.0 * u2),
    )


def cap(s):
    """C^2 cap: 1 on (-inf, 1], 0 on [2, inf), quintic decay in between.

    Returns the value and the first two derivatives.
    """
    if s <= 1.0:
        return 1.0, 0.0, 0.0
    if s >= 2.0:
        return 0.0, 0.0, 0.0
    val, d1, d2 = _smoothstep(s - 1.0)
    return 1.0 - val, -d1, -d2


class SmoothOuter:
    """Outer function given by user-supplied value, gradient and Hessian.

    Admits C^2 outers that are not polynomials, e.g. the cap ``q(v / n)``.
    """

    kind = "smooth"

    def __init__(self, nvars, value, gradient, hessian, name="custom", params=None):
        self.nvars = int(nvars)
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name
        self.params = dict(params or {})

    @classmethod
    def cap(cls, scale):
        scale = float(scale)
        if not scale > 0:
            raise ValueError("cap scale must be positive")

        def value(v):
            return cap(v[0] / scale)[0]

        def gradient(v):
            return np.array([cap(v[0] / scale)[1] / scale])

        def hessian(v):
            return np.array([[cap(v[0] / scale)[2] / scale ** 2]])

        return cls(1, value, gradient, hessian, name="cap", params={"scale": scale})

    def value(self, v):
        return float(self._value(np.asarray(v, dtype=float)))

    def gradient(self, v):
        return np.asarray(self._gradient(np.asarray(v, dtype=float)), dtype=float).reshape(self.nvars)

    def hessian(self, v):
        return np.asarray(self._hessian(np.asarray(v, dtype=float)), dtype=float).reshape(self.nvars, self.nvars)

    def at_zero(self):
        return self.value(np.zeros(self.nvars))

    def to_json(self):
        if self.name != "cap":
            raise ValueError("only the built-in cap outer is serializable")
        return {"kind": "cap", "scale": self.params["scale"]}

    def __repr__(self):
        return f"SmoothOuter({self.name}, {self.params})"


# ----------------------------------------------------------------------------
# cylinder functions


@dataclass(frozen=True)
class DerivativeStructure:
    """Derivatives of f at one measure in terms of a fixed spatial basis."""

    value: float
    alpha: np.ndarray  # (K,) coefficients of d1
    M: np.ndarray  # (K, K) symmetric coefficients of d2


class CylinderFunction:
    """``p(<phi_1, mu> E, ..., <phi_n, mu> E)`` with optional ``E = exp(-<w, mu>)``.

    Parameters
    ----------
    outer : Polynomial or SmoothOuter
        The function p of n variables.
    slots : list
        Inner functions (BumpFunction, WeightSlot, OneFunction).
    w : WeightFunction
    exp_weight : bool
    """

    def __init__(self, outer, slots, w, exp_weight=True):
        slots = list(slots)
        if outer.nvars != len(slots):
            raise ValueError(f"outer function takes {outer.nvars} variables but {len(slots)} slots given")
        if not slots:
            raise ValueError("need at least one slot")
        dims = {s.d for s in slots if isinstance(s, BumpFunction)}
        if len(dims) > 1:
            raise ValueError("bump slots have mixed dimensions")
        self.outer = outer
        self.slots = slots
        self.w = w
        self.exp_weight = bool(exp_weight)
        self._basis = slots + ([WeightSlot(w)] if self.exp_weight else [])

    # -- constructors -------------------------------------------------------

    @classmethod
    def linear(cls, phi, w, exp_weight=True):
        if phi == "weight":
            phi = WeightSlot(w)
        return cls(Polynomial([(1.0, (1,))]), [phi], w, exp_weight)

    @classmethod
    def mass_cap(cls, w, scale):
        """``q(<w, mu> / scale)`` with q the C^2 cap."""
        return cls(SmoothOuter.cap(scale), [WeightSlot(w)], w, exp_weight=False)

    # -- membership ---------------------------------------------------------

    @property
    def dim(self):
        for s in self.slots:
            if isinstance(s, BumpFunction):
                return s.d
        return None

    def algebra(self):
        """``"D_w"``, ``"E_w"`` or ``"extended"``."""
        poly = isinstance(self.outer, Polynomial)
        if self.exp_weight:
            if poly and all(isinstance(s, BumpFunction) for s in self.slots) and abs(self.outer.at_zero()) == 0.0:
                return "D_w"
            return "extended"
        if poly and all(isinstance(s, (BumpFunction, WeightSlot, OneFunction)) for s in self.slots):
            return "E_w"
        return "extended"

    # -- algebra operations -------------------------------------------------

    def _compatible(self, other):
        if not isinstance(other, CylinderFunction):
            raise TypeError("can only combine cylinder functions")
        if self.exp_weight != other.exp_weight or self.w != other.w:
            raise ValueError("cylinder functions must share w and exp_weight")
        if not (isinstance(self.outer, Polynomial) and isinstance(other.outer, Polynomial)):
            raise ValueError("algebra operations need polynomial outers")

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scaled(other)
        self._compatible(other)
        return CylinderFunction(self.outer * other.outer, self.slots + other.slots, self.w, self.exp_weight)

    __rmul__ = __mul__

    def __add__(self, other):
        self._compatible(other)
        n1, n2 = self.outer.nvars, other.outer.nvars
        terms = self.outer.padded(0, n2).terms + other.outer.padded(n1, 0).terms
        return CylinderFunction(Polynomial(terms, n1 + n2), self.slots + other.slots, self.w, self.exp_weight)

    def scaled(self, s):
        if not isinstance(self.outer, Polynomial):
            raise ValueError("scaling needs a polynomial outer")
        return CylinderFunction(self.outer.scaled(s), self.slots, self.w, self.exp_weight)

    # -- evaluation ---------------------------------------------------------

    @property
    def nbasis(self):
        return len(self._basis)

    def basis(self, X, order=0):
        """Basis values ``(m, K)``, gradients ``(m, K, d)``, Hessians ``(m, K, d, d)``."""
        X = _as_points(X)
        parts = [b.evaluate(X, order) for b in self._basis]
        vals = np.stack([p[0] for p in parts], axis=1)
        grads = np.stack([p[1] for p in parts], axis=1) if order >= 1 else None
        hess = np.stack([p[2] for p in parts], axis=1) if order >= 2 else None
        return vals, grads, hess

    def _pairings(self, mu):
        vals = self.basis(mu.locations)[0]
        return mu.weights @ vals

    def _v(self, mu):
        pair = self._pairings(mu)
        n = len(self.slots)
        E = np.exp(-pair[n]) if self.exp_weight else 1.0
        return pair[:n], E

    def __call__(self, mu):
        Phi, E = self._v(mu)
        return self.outer.value(Phi * E)

    eval = __call__

    def derivative_structure(self, mu):
        """Value, first-derivative coefficients ``alpha`` and second ``M`` at mu."""
        Phi, E = self._v(mu)
        v = Phi * E
        n = len(self.slots)
        K = self.nbasis
        c = self.outer.gradient(v)
        H = self.outer.hessian(v)
        A = np.zeros((n, K))
        A[np.arange(n), np.arange(n)] = E
        M = np.zeros((K, K))
        if self.exp_weight:
            kw = n
            A[:, kw] = -Phi * E
            # sum_i c_i d^2 v_i: E (Phi_i w w - phi_i w - w phi_i)
            M[kw, kw] += E * float(c @ Phi)
            M[np.arange(n), kw] -= E * c
            M[kw, np.arange(n)] -= E * c
        M += A.T @ H @ A
        M = 0.5 * (M + M.T)
        return DerivativeStructure(self.outer.value(v), A.T @ c, M)

    def d1(self, mu, x):
        """Measure derivative at the rows of ``x``; scalar for a single point."""
        X = _as_points(x)
        s = self.derivative_structure(mu)
        out = self.basis(X)[0] @ s.alpha
        return float(out[0]) if np.ndim(x) <= 1 and X.shape[0] == 1 else out

    def d2(self, mu, x, y):
        X = _as_points(x)
        Y = _as_points(y)
        s = self.derivative_structure(mu)
        px = self.basis(X)[0]
        py = self.basis(Y)[0]
        out = np.einsum("ik,kl,il->i", px, s.M, py)
        return float(out[0]) if np.ndim(x) <= 1 and X.shape[0] == 1 else out

    def d1_magnitude(self, mu, x):
        """sum_k |alpha_k psi_k(x)|: the scale against which d1 is resolved."""
        s = self.derivative_structure(mu)
        return float(np.abs(self.basis(_as_points(x))[0][0] * s.alpha).sum())

    def d2_magnitude(self, mu, x, y):
        s = self.derivative_structure(mu)
        px = self.basis(_as_points(x))[0][0]
        py = self.basis(_as_points(y))[0][0]
        return float(np.abs(px[:, None] * s.M * py[None, :]).sum())

    def grad_d1(self, mu, X, order=1):
        """Spatial gradient (and Hessian if ``order=2``) of x -> d1(mu, x)."""
        s = self.derivative_structure(mu)
        _, g, h = self.basis(X, order)
        grad = np.einsum("k,mkd->md", s.alpha, g)
        if order >= 2:
            return grad, np.einsum("k,mkde->mde", s.alpha, h)
        return grad

    # -- serialization ------------------------------------------------------

    def to_json(self):
        return {
            "exp_weight": self.exp_weight,
            "p": self.w.p,
            "slots": [s.to_json() for s in self.slots],
            "outer": self.outer.to_json(),
        }

    @classmethod
    def from_json(cls, obj):
        w = WeightFunction(obj.get("p", 2.0))
        slots = []
        for s in obj["slots"]:
            kind = s["kind"]
            if kind == "bump":
                slots.append(BumpFunction(s["center"], s.get("radius", 1.0), s.get("scale", np.e)))
            elif kind == "weight":
                slots.append(WeightSlot(w))
            elif kind == "one":
                slots.append(OneFunction())
            else:
                raise ValueError(f"unknown slot kind {kind!r}")
        o = obj["outer"]
        if o["kind"] == "polynomial":
            outer = Polynomial([(c, idx) for c, idx in o["terms"]], len(slots))
        elif o["kind"] == "cap":
            outer = SmoothOuter.cap(o["scale"])
        else:
            raise ValueError(f"unknown outer kind {o['kind']!r}")
        return cls(outer, slots, w, bool(obj.get("exp_weight", True)))

    def __repr__(self):
        return f"CylinderFunction(outer={self.outer!r}, slots={self.slots!r}, exp_weight={self.exp_weight})"


# ----------------------------------------------------------------------------
# finite-difference oracle


@dataclass(frozen=True)
class FDEstimate:
    value: float
    coarse: float
    fine: float
    cancellation: bool

    def __float__(self):
        return self.value


FD_DISAGREEMENT = 1e-4
# below this the oracle cannot tell a value from zero; errors are then absolute
ABS_FLOOR = 1e-8


def _richardson(coarse, fine):
    return (4.0 * fine - coarse) / 3.0


def fd_oracle(f, mu, x, y=None, eps=None):
    """Finite-difference measure derivative by appending signed atoms.

    First order uses the central difference ``(f(mu + e dx) - f(mu - e dx)) / 2e``
    with ``e = 1e-5 * max(1, |f(mu)|)`` (capped at 1e-3); second order uses the four-point mixed
    difference with ``e = 1e-3 / max(1, w(x), w(y))``. First order is
    extrapolated from steps e and e/2; second order adds a third level e/4,
    which removes the e^4 remainder that otherwise dominates near-zero mixed
    derivatives. ``cancellation`` is set when the e and e/2 levels disagree
    by more than 1e-4 relative.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if y is None:
        if eps is None:
            eps = min(1e-3, 1e-5 * max(1.0, abs(f(mu))))

        def level(e):
            return (f(mu.add_atom(x, e)) - f(mu.add_atom(x, -e))) / (2.0 * e)

    else:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if eps is None:
            wx = float(f.w(x)[0])
            wy = float(f.w(y)[0])
            eps = 1e-3 / max(1.0, wx, wy)

        def level(e):
            total = 0.0
            for sx, sy in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                nu = mu.add_atom(x, sx * e).add_atom(y, sy * e)
                total += sx * sy * f(nu)
            return total / (4.0 * e * e)

    if not 0 < eps <= 1e-3:
        raise ValueError("finite-difference step must lie in (0, 1e-3]")
    coarse = level(eps)
    fine = level(eps / 2.0)
    value = _richardson(coarse, fine)
    if y is not None:
        finer = _richardson(fine, level(eps / 4.0))
        value = (16.0 * finer - value) / 15.0
    denom = max(abs(value), ABS_FLOOR)
    return FDEstimate(value, coarse, fine, abs(coarse - fine) > FD_DISAGREEMENT * denom)


def escape_sequence(z, n, w):
    """``(1 - 1/w(n)) delta_z + (1/w(n)) delta_{n e_1}``: mass escaping through w."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    far = np.zeros_like(z)
    far[0] = n
    m = 1.0 / float(w(far)[0])
    return DiscreteMeasure(np.vstack([z, far]), [1.0 - m, m])


def relative_error(analytic, oracle, magnitude=0.0):
    """|analytic - oracle| relative to the larger of |oracle| and the term magnitude.

    ``magnitude`` is the sum of absolute basis terms, which measures the
    cancellation the oracle has to resolve; values below ``ABS_FLOOR`` are
    compared absolutely.
    """
    return abs(analytic - oracle) / max(abs(oracle), magnitude, ABS_FLOOR)


# ----------------------------------------------------------------------------
# random instances and the self-test


FAMILIES = ("D_w", "product", "E_w")


def random_cylinder(rng, d, w, family):
    """Random cylinder function of the given family.

    ``"D_w"``: polynomial with p(0) = 0 in up to three bumps under the
    exponential factor; ``"product"``: product of two linear D_w functions;
    ``"E_w"``: polynomial in a bump, w and 1 without the exponential factor.
    """

    def rb():
        return BumpFunction(rng.normal(size=d), rng.uniform(0.8, 2.5), rng.uniform(0.5, 4.0))

    if family == "D_w":
        n = int(rng.integers(1, 4))
        slots = [rb() for _ in range(n)]
        terms = [(float(rng.normal()), tuple(int(k) for k in rng.integers(0, 3, size=n))) for _ in range(3)]
        terms = [(c, i) for c, i in terms if sum(i) > 0] or [(1.0, (1,) + (0,) * (n - 1))]
        return CylinderFunction(Polynomial(terms, n), slots, w, True)
    if family == "product":
        return CylinderFunction.linear(rb(), w) * CylinderFunction.linear(rb(), w)
    if family == "E_w":
        slots = [rb(), WeightSlot(w), OneFunction()]
        terms = [(float(rng.normal()), (1, 1, 0)), (float(rng.normal()), (0, 2, 1)), (0.3, (2, 0, 0))]
        return CylinderFunction(Polynomial(terms, 3), slots, w, False)
    raise ValueError(f"unknown family {family!r}")


def random_instance(rng):
    """(f, mu, x, y) with f cycling through all families and mu a random atomic probability."""
    d = int(rng.integers(1, 3))
    w = WeightFunction(float(rng.uniform(1.0, 3.0)))
    family = FAMILIES[int(rng.integers(len(FAMILIES)))]
    f = random_cylinder(rng, d, w, family)
    m = int(rng.integers(1, 6))
    mu = DiscreteMeasure(rng.normal(size=(m, d)) * 1.2, rng.dirichlet(np.ones(m)))
    x = rng.normal(size=d) * 1.5
    y = rng.normal(size=d) * 1.5
    if rng.random() < 0.2:
        x = np.array(mu.locations[0])
    return f, mu, x, y, family


def derivative_selftest(instances=1000, seed=0, tol1=1e-6, tol2=1e-5):
    """Closed-form d1 and d2 against :func:`fd_oracle` on random instances."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(instances):
        f, mu, x, y, family = random_instance(rng)
        o1 = fd_oracle(f, mu, x)
        e1 = relative_error(f.d1(mu, x), o1.value, f.d1_magnitude(mu, x))
        o2 = fd_oracle(f, mu, x, y)
        e2 = relative_error(f.d2(mu, x, y), o2.value, f.d2_magnitude(mu, x, y))
        rows.append({"instance": i, "family": family, "d": mu.d, "atoms": mu.n, "err_d1": e1, "err_d2": e2,
                     "cancellation": bool(o1.cancellation or o2.cancellation)})
    max1 = max(r["err_d1"] for r in rows)
    max2 = max(r["err_d2"] for r in rows)
    return {"instances": instances, "max_rel_err_d1": max1, "max_rel_err_d2": max2, "tol_d1": tol1, "tol_d2": tol2,
            "cancellation_flags": sum(r["cancellation"] for r in rows), "pass": bool(max1 <= tol1 and max2 <= tol2),
            "rows": rows}
