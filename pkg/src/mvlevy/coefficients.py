"""Coefficient sets (kill, drift, diffusions, jumps) and the built-in catalog.

Coefficient callables are vectorized over points: ``drift(mu, X)`` returns an
``(m, d)`` array for ``X`` of shape ``(m, d)``, ``sigma`` and ``tau`` return
``(m, d, d)`` symmetric matrices, ``kill(mu)`` returns a float and a jump map
``shift(mu, X, y)`` returns ``(m, d)`` displacements inside ``[0, c]^d``.
"""
from dataclasses import dataclass, field

import numpy as np

from .kernels import ALPHA_CONSTANT, ALPHA_GAUSSIAN
from .measures import DiscreteMeasure

OUTER_PRODUCT = "outer_product"
SQUARED_DIFFERENCE = "squared_difference"


class CoefficientError(ValueError):
    """A coefficient returned an invalid value."""


def _first_moment(mu):
    return mu.weights @ mu.locations  # (d,)


def _scalar_matrix(value, m, d):
    out = np.zeros((m, d, d))
    out[:, np.arange(d), np.arange(d)] = value
    return out


def _as_matrix(value, d):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(d)
    arr = arr.reshape(d, d)
    if not np.allclose(arr, arr.T):
        raise CoefficientError("diffusion matrices must be symmetric")
    return arr


def _constant_matrix(mat):
    def fn(mu, X):
        return np.broadcast_to(mat, (X.shape[0],) + mat.shape).copy()

    return fn


@dataclass
class JumpSpec:
    """Finite-activity common jumps: rate, mark law and shift map.

    ``marks`` is a probability measure on R^m. ``shift(mu, X, y)`` gives the
    displacement of a particle at each row of X when mark y fires.
    """

    intensity: float
    marks: DiscreteMeasure
    shift: object
    cube: float

    def __post_init__(self):
        if not (self.intensity >= 0 and np.isfinite(self.intensity)):
            raise CoefficientError("jump intensity must be a nonnegative finite number")
        if not self.marks.is_probability(1e-9):
            raise CoefficientError("jump mark law must be a probability measure")
        if not self.cube > 0:
            raise CoefficientError("cube bound c must be positive")

    def displacement(self, mu, X, y):
        out = np.asarray(self.shift(mu, X, y), dtype=float)
        if out.shape != X.shape:
            raise CoefficientError(f"jump map returned shape {out.shape}, expected {X.shape}")
        if np.any(out < -1e-15) or np.any(out > self.cube + 1e-15) or not np.all(np.isfinite(out)):
            i = int(np.flatnonzero(((out < 0) | (out > self.cube) | ~np.isfinite(out)).any(axis=1))[0])
            raise CoefficientError(f"jump map value {out[i].tolist()} at atom {i} leaves the cube [0, {self.cube}]^d")
        return out


@dataclass
class CoefficientSet:
    """Everything that determines a Levy-type generator on measures.

    Attributes
    ----------
    d : int
    kill, drift, sigma, tau : callables (see module docstring)
    q_kind : str
        ``"outer_product"`` (common diffusion tau) or ``"squared_difference"``
        (``Q(phi x phi)(x, y) = alpha(x, y) (phi(x) - phi(y))^2``; tau is unused).
    alpha : tuple
        ``(kind, c, ell)`` for the squared-difference kernel.
    jump : JumpSpec or None
    affine : dict or None
        ``{"b0", "b1", "b2", "sigma", "tau"}`` when d = 1, drift is
        ``b0 + b1 x + b2 m1(mu)`` and sigma, tau are constants.
    valid : bool
        False for deliberately corrupted operators (e.g. negative killing).
    """

    d: int
    kill: object
    drift: object
    sigma: object
    tau: object
    q_kind: str = OUTER_PRODUCT
    alpha: tuple = (ALPHA_CONSTANT, 0.0, 1.0)
    jump: JumpSpec = None
    affine: dict = None
    valid: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.q_kind not in (OUTER_PRODUCT, SQUARED_DIFFERENCE):
            raise CoefficientError(f"unknown q_kind {self.q_kind!r}")
        if self.q_kind == SQUARED_DIFFERENCE and self.alpha[0] not in (ALPHA_CONSTANT, ALPHA_GAUSSIAN):
            raise CoefficientError("unknown alpha kind")

    # checked evaluation: errors name the coefficient and the atom
    def _check(self, name, arr, X, shape):
        arr = np.asarray(arr, dtype=float)
        if arr.shape != shape:
            raise CoefficientError(f"{name} returned shape {arr.shape}, expected {shape}")
        bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1) if arr.ndim else None
        if bad is not None and bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise CoefficientError(f"{name} is not finite at atom {i} (x={X[i].tolist()})")
        return arr

    def kill_rate(self, mu):
        k = float(self.kill(mu))
        if not np.isfinite(k):
            raise CoefficientError("kill rate is not finite")
        return k

    def drift_at(self, mu, X):
        return self._check("drift", self.drift(mu, X), X, X.shape)

    def sigma_at(self, mu, X):
        return self._check("sigma", self.sigma(mu, X), X, X.shape + (self.d,))

    def tau_at(self, mu, X):
        if self.q_kind == SQUARED_DIFFERENCE:
            return np.zeros(X.shape + (self.d,))
        return self._check("tau", self.tau(mu, X), X, X.shape + (self.d,))

    def diffusion_at(self, mu, X):
        """sigma sigma^T + tau tau^T at the rows of X."""
        s = self.sigma_at(mu, X)
        t = self.tau_at(mu, X)
        return s @ s.swapaxes(1, 2) + t @ t.swapaxes(1, 2)

    def alpha_at(self, X, Y):
        kind, c, ell = self.alpha
        if kind == ALPHA_CONSTANT:
            return np.full((X.shape[0], Y.shape[0]), c)
        sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(-1)
        return c * np.exp(-sq / (2.0 * ell * ell))

    @property
    def has_common_noise(self):
        return self.q_kind == OUTER_PRODUCT

    def to_json(self):
        if self.name == "custom":
            raise ValueError("custom coefficient sets are not serializable")
        return {"name": self.name, "d": self.d, "params": self.params}

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - {"name", "d", "params"}
        if unknown:
            raise ValueError(f"unknown coefficient keys {sorted(unknown)}")
        return catalog(obj["name"], d=obj.get("d", 1), **obj.get("params", {}))


# ----------------------------------------------------------------------------
# catalog


def _zero_matrix(mu, X):
    return np.zeros(X.shape + (X.shape[1],))


def _no_kill(mu):
    return 0.0


def _make_affine(d, b0, b1, b2, sigma, tau, kappa=0.0):
    b0v = np.broadcast_to(np.asarray(b0, dtype=float), (d,)).copy()
    smat = _as_matrix(sigma, d)
    tmat = _as_matrix(tau, d)

    def drift(mu, X):
        return b0v[None, :] + b1 * X + b2 * _first_moment(mu)[None, :]

    affine = None
    if d == 1:
        affine = {"b0": float(b0v[0]), "b1": float(b1), "b2": float(b2), "sigma": float(smat[0, 0]), "tau": float(tmat[0, 0])}
    return dict(
        kill=(lambda mu: kappa) if kappa else _no_kill,
        drift=drift,
        sigma=_constant_matrix(smat),
        tau=_constant_matrix(tmat),
        affine=affine,
    )


def _zero(d):
    return CoefficientSet(d, _no_kill, lambda mu, X: np.zeros_like(X), _zero_matrix, _zero_matrix,
                          affine={"b0": 0.0, "b1": 0.0, "b2": 0.0, "sigma": 0.0, "tau": 0.0} if d == 1 else None)


def _constant(d, drift=0.0, sigma=0.0, tau=0.0):
    return CoefficientSet(d, **_make_affine(d, drift, 0.0, 0.0, sigma, tau))


def _affine(d, b0=0.0, b1=-1.0, b2=0.0, sigma=0.5, tau=0.5):
    return CoefficientSet(d, **_make_affine(d, b0, b1, b2, sigma, tau))


def _ou_mean_field(d, mean_coef=0.5, sigma=0.5, tau=0.5):
    return CoefficientSet(d, **_make_affine(d, 0.0, -1.0, mean_coef, sigma, tau))


def _affine_unit_interval(d, theta=1.0, center=0.5, sigma=0.3, tau=0.1):
    # mean reversion to the middle of [0, 1]; noise small enough to stay near it
    return CoefficientSet(d, **_make_affine(d, theta * center, -theta, 0.0, sigma, tau))


def _tanh_mean_field(d, sigma=0.4, tau=0.3, coupling=1.0):
    def drift(mu, X):
        return -X + coupling * np.tanh(_first_moment(mu))[None, :]

    def sigma_fn(mu, X):
        # state-dependent scalar volatility between 0.5 sigma and 1.5 sigma
        s = sigma * (1.0 + 0.5 * np.tanh(X.sum(axis=1)))
        return _scalar_matrix(s[:, None], X.shape[0], d)

    tmat = _as_matrix(tau, d)
    return CoefficientSet(d, _no_kill, drift, sigma_fn, _constant_matrix(tmat))


def _pure_killing(d, kappa=1.0):
    if kappa < 0:
        raise CoefficientError("kill rate must be nonnegative")
    z = _zero(d)
    z.kill = lambda mu: kappa
    return z


def _negative_killing(d, kappa=-1.0):
    z = _zero(d)
    z.kill = lambda mu: kappa
    z.valid = False
    return z


def _common_shift_jump(d, intensity=1.0, marks=None, cube=1.0, shift="constant", size=0.5,
                       drift_rate=0.0, sigma=0.0):
    if marks is None:
        marks = DiscreteMeasure([[0.0]], [1.0])
    elif not isinstance(marks, DiscreteMeasure):
        marks = DiscreteMeasure.from_json(marks)
    if shift == "constant":
        size_v = np.broadcast_to(np.asarray(size, dtype=float), (d,)).copy()
        if np.any(size_v < 0) or np.any(size_v > cube):
            raise CoefficientError(f"constant jump size {size_v.tolist()} outside the cube [0, {cube}]")

        def shift_fn(mu, X, y):
            return np.broadcast_to(size_v, X.shape).copy()

    elif shift == "logistic":
        if not 0 < size <= cube:
            raise CoefficientError(f"logistic jump amplitude {size} outside (0, {cube}]")

        def shift_fn(mu, X, y):
            z = X - _first_moment(mu)[None, :] + float(np.sum(y))
            return size / (1.0 + np.exp(-z))

    else:
        raise CoefficientError(f"unknown shift kind {shift!r}")
    jump = JumpSpec(float(intensity), marks, shift_fn, float(cube))
    parts = _make_affine(d, 0.0, -drift_rate, 0.0, sigma, 0.0)
    parts["affine"] = None
    return CoefficientSet(d, **parts, jump=jump)


def _sqdiff_gaussian(d, drift_rate=1.0, sigma=0.5, strength=0.5, length=1.0):
    parts = _make_affine(d, 0.0, -drift_rate, 0.0, sigma, 0.0)
    parts["affine"] = None
    return CoefficientSet(d, **parts, q_kind=SQUARED_DIFFERENCE, alpha=(ALPHA_GAUSSIAN, float(strength), float(length)))


def _sqdiff_constant(d, drift_rate=1.0, sigma=0.5, strength=0.5):
    parts = _make_affine(d, 0.0, -drift_rate, 0.0, sigma, 0.0)
    parts["affine"] = None
    return CoefficientSet(d, **parts, q_kind=SQUARED_DIFFERENCE, alpha=(ALPHA_CONSTANT, float(strength), 1.0))


def _polynomial_drift(sign):
    def factory(d, sigma=0.5, tau=0.5):
        smat = _as_matrix(sigma, d)
        tmat = _as_matrix(tau, d)

        def drift(mu, X):
            return sign * X ** 3

        return CoefficientSet(d, _no_kill, drift, _constant_matrix(smat), _constant_matrix(tmat))

    return factory


CATALOG = {
    "zero": (_zero, "all coefficients zero"),
    "constant": (_constant, "constant drift, sigma, tau"),
    "affine": (_affine, "b0 + b1 x + b2 m1(mu), constant sigma and tau"),
    "ou_mean_field": (_ou_mean_field, "b = -x + 0.5 m1(mu), sigma = tau = 0.5"),
    "affine_unit_interval": (_affine_unit_interval, "b = theta (0.5 - x), small noise; keeps mass near [0, 1]"),
    "tanh_mean_field": (_tanh_mean_field, "b = -x + tanh(m1(mu)), state-dependent sigma"),
    "pure_killing": (_pure_killing, "constant kill rate kappa, nothing else"),
    "negative_killing": (_negative_killing, "kill rate -1 (invalid operator, for negative controls)"),
    "common_shift_jump": (_common_shift_jump, "Poisson common jumps with constant or logistic shift in [0, c]^d"),
    "sqdiff_gaussian": (_sqdiff_gaussian, "Q = alpha (phi(x) - phi(y))^2 with Gaussian alpha"),
    "sqdiff_constant": (_sqdiff_constant, "Q = alpha (phi(x) - phi(y))^2 with constant alpha"),
    "cubic_drift": (_polynomial_drift(-1.0), "b = -x^3 (superlinear, restoring)"),
    "superlinear_drift": (_polynomial_drift(1.0), "b = +x^3 (superlinear, explosive)"),
}


def catalog(name, d=1, **params):
    """Build catalog member ``name`` in dimension d with parameter overrides."""
    if name not in CATALOG:
        raise KeyError(f"unknown coefficient family {name!r}; have {sorted(CATALOG)}")
    d = int(d)
    if d < 1:
        raise CoefficientError("dimension must be positive")
    factory = CATALOG[name][0]
    try:
        cs = factory(d, **params)
    except TypeError as exc:
        raise CoefficientError(f"bad parameters for {name}: {exc}") from None
    cs.name = name
    cs.params = {k: (v.to_json() if isinstance(v, DiscreteMeasure) else v) for k, v in params.items()}
    return cs


def catalog_listing():
    return [{"name": k, "description": v[1]} for k, v in sorted(CATALOG.items())]
