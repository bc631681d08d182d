"""Atomic measures, the weight function, the embedding T and metrics on P_w.

Every measure here has finitely many atoms, so pairings <phi, mu> are exact
finite sums. Locations are stored as an ``(n, d)`` float array and weights as
an ``(n,)`` array; both are made read-only on construction.
"""
import json

import numpy as np
from scipy.optimize import linprog

from . import kernels

PROBABILITY_TOL = 1e-12


class EvaluationError(ValueError):
    """A function returned a non-finite value at one of the atoms."""


def _as_points(x, d=None):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if d is None or arr.shape[0] == d else arr.reshape(-1, 1)
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {arr.shape}")
    return arr


class WeightFunction:
    r"""Smooth weight :math:`w \ge 1` with :math:`w(x) = |x|^p` for :math:`|x| > 2`.

    On :math:`|x| \le 1` the weight is identically one; on :math:`1 < |x| \le 2`
    it blends ``1`` into ``|x|^p`` with a quintic smoothstep in :math:`s = |x|^2`,
    which makes w twice continuously differentiable and radially nondecreasing.

    Parameters
    ----------
    p : float
        Growth exponent, strictly positive.
    """

    def __init__(self, p=2.0):
        p = float(p)
        if not p > 0 or not np.isfinite(p):
            raise ValueError("weight exponent p must be a positive finite number")
        self.p = p

    def __repr__(self):
        return f"WeightFunction(p={self.p})"

    def __eq__(self, other):
        return isinstance(other, WeightFunction) and other.p == self.p

    def __hash__(self):
        return hash(("w", self.p))

    def evaluate(self, X, order=0):
        """Values, gradients and Hessians at the rows of ``X`` (up to ``order``)."""
        return kernels.weight_eval(_as_points(X), self.p, order)

    def __call__(self, X):
        return self.evaluate(X)[0]

    def gradient(self, X):
        return self.evaluate(X, 1)[1]

    def hessian(self, X):
        return self.evaluate(X, 2)[2]

    def to_json(self):
        return {"p": self.p}


class DiscreteMeasure:
    """Finitely many weighted atoms in R^d.

    Parameters
    ----------
    locations : array_like, shape (n, d)
    weights : array_like, shape (n,)
    signed : bool
        Allow zero or negative weights. Signed measures only appear as
        evaluation points of test functions (finite-difference oracles).
    """

    __slots__ = ("locations", "weights", "signed")

    def __init__(self, locations, weights, signed=False):
        X = np.array(locations, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        a = np.array(weights, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != a.shape[0]:
            raise ValueError(f"locations {X.shape} and weights {a.shape} do not match")
        if X.shape[0] == 0:
            raise ValueError("a measure needs at least one atom")
        if not np.all(np.isfinite(X)):
            raise ValueError("atom locations must be finite")
        if not np.all(np.isfinite(a)):
            raise ValueError("atom weights must be finite")
        if not signed and np.any(a <= 0):
            raise ValueError("atom weights must be strictly positive")
        X.setflags(write=False)
        a.setflags(write=False)
        self.locations = X
        self.weights = a
        self.signed = bool(signed)

    @classmethod
    def _trusted(cls, X, a, signed=False):
        # no validation: used inside integrators where inputs are known good
        obj = cls.__new__(cls)
        obj.locations = X
        obj.weights = a
        obj.signed = signed
        return obj

    @classmethod
    def dirac(cls, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.reshape(1, -1), [1.0])

    @classmethod
    def empirical(cls, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        n = X.shape[0]
        return cls(X, np.full(n, 1.0 / n))

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def d(self):
        return self.locations.shape[1]

    @property
    def mass(self):
        return float(np.sum(self.weights))

    def is_probability(self, tol=PROBABILITY_TOL):
        return not self.signed and abs(self.mass - 1.0) <= tol

    def moment(self, k):
        """Raw moment sum_i a_i x_i^k, coordinatewise."""
        return self.weights @ self.locations ** k

    def add_atom(self, x, eps):
        """Return ``self + eps * delta_x`` (signed if eps < 0)."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        X = np.vstack([self.locations, x])
        a = np.append(self.weights, eps)
        return DiscreteMeasure._trusted(X, a, signed=self.signed or eps <= 0)

    def pushforward(self, displacement):
        """Measure with atoms x_i + displacement_i and unchanged weights."""
        return DiscreteMeasure._trusted(self.locations + displacement, self.weights, self.signed)

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (
            self.locations.shape == other.locations.shape
            and np.array_equal(self.locations, other.locations)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, d={self.d}, mass={self.mass:.6g})"

    def to_json(self):
        atoms = [list(map(float, x)) + [float(a)] for x, a in zip(self.locations, self.weights)]
        return {"d": self.d, "atoms": atoms}

    @classmethod
    def from_json(cls, obj):
        if isinstance(obj, str):
            obj = json.loads(obj)
        d = int(obj["d"])
        if d < 1:
            raise ValueError("dimension d must be positive")
        atoms = np.asarray(obj["atoms"], dtype=float)
        if atoms.ndim != 2 or atoms.shape[1] != d + 1:
            raise ValueError(f"each atom must have {d} coordinates followed by a weight")
        return cls(atoms[:, :d], atoms[:, d])


class WeightedMeasure:
    """Positive atomic measure on the one-point compactification of R^d.

    ``at_infinity_mass`` is the mass at the point at infinity; it is zero for
    every image of :func:`embed`.
    """

    __slots__ = ("locations", "weights", "at_infinity_mass")

    def __init__(self, locations, weights, at_infinity_mass=0.0):
        X = np.array(locations, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        a = np.array(weights, dtype=float).reshape(-1)
        if X.shape[0] != a.shape[0]:
            raise ValueError("locations and weights do not match")
        if np.any(a < 0) or at_infinity_mass < 0:
            raise ValueError("weighted measures are positive")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(a))):
            raise ValueError("non-finite atom")
        X.setflags(write=False)
        a.setflags(write=False)
        self.locations = X
        self.weights = a
        self.at_infinity_mass = float(at_infinity_mass)

    @property
    def total_mass(self):
        return float(np.sum(self.weights)) + self.at_infinity_mass

    def pair(self, phi, value_at_infinity=0.0):
        return float(self.weights @ phi(self.locations)) + self.at_infinity_mass * value_at_infinity

    def __repr__(self):
        return f"WeightedMeasure(n={len(self.weights)}, mass={self.total_mass:.6g}, at_infinity={self.at_infinity_mass})"


def integrate(phi, mu):
    """Exact pairing <phi, mu> = sum_i a_i phi(x_i).

    ``phi`` must accept an ``(n, d)`` array and return ``n`` values.
    """
    vals = np.asarray(phi(mu.locations), dtype=float).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        i = int(bad[0])
        raise EvaluationError(f"integrand is {vals[i]} at atom {i} (x={mu.locations[i].tolist()})")
    return float(mu.weights @ vals)


def embed(mu, w):
    """The embedding T(mu)(dx) = w(x) mu(dx)."""
    if not mu.is_probability():
        raise ValueError("embed expects a probability measure")
    return WeightedMeasure(mu.locations, mu.weights * w(mu.locations), 0.0)


def _merge_support(nu1, nu2):
    pts = np.vstack([nu1.locations, nu2.locations])
    support, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    signed = np.zeros(support.shape[0])
    n1 = nu1.locations.shape[0]
    np.add.at(signed, inverse[:n1], nu1.weights)
    np.add.at(signed, inverse[n1:], -nu2.weights)
    return support, signed


def bl_distance(nu1, nu2):
    r"""Bounded-Lipschitz distance between two finite atomic measures.

    Solves :math:`\sup\{\langle f, \nu_1-\nu_2\rangle : \|f\|_\infty\le 1,
    \mathrm{Lip}(f)\le 1\}` as a linear program in the values of f on the
    union of supports. Any feasible vector extends to a function on R^d with
    the same bounds, so the optimum is exact. The point at infinity is an extra
    variable carrying only the sup-norm bound.
    """
    if len(nu1.weights) == 0 and nu1.at_infinity_mass == 0:
        raise ValueError("empty support")
    if len(nu2.weights) == 0 and nu2.at_infinity_mass == 0:
        raise ValueError("empty support")
    support, c = _merge_support(nu1, nu2)
    m = support.shape[0]
    inf_diff = nu1.at_infinity_mass - nu2.at_infinity_mass

    dist = np.sqrt(((support[:, None, :] - support[None, :, :]) ** 2).sum(-1))
    iu, ju = np.triu_indices(m, 1)
    rows = 2 * iu.size
    nvar = m + 1
    A = np.zeros((rows, nvar))
    r = np.arange(iu.size)
    A[r, iu] = 1.0
    A[r, ju] = -1.0
    A[iu.size + r, iu] = -1.0
    A[iu.size + r, ju] = 1.0
    b = np.concatenate([dist[iu, ju], dist[iu, ju]])
    obj = -np.append(c, inf_diff)
    res = linprog(
        obj,
        A_ub=A if rows else None,
        b_ub=b if rows else None,
        bounds=[(-1.0, 1.0)] * nvar,
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"bounded-Lipschitz LP failed: {res.message}")
    return max(0.0, float(-res.fun))


def dw_distance(mu1, mu2, w):
    """Distance on P_w: bounded-Lipschitz distance between T(mu1) and T(mu2)."""
    return bl_distance(embed(mu1, w), embed(mu2, w))
