"""The Levy-type operator on cylinder functions at atomic measures.

For a coefficient set and a cylinder function f::

    Lf(mu) = -kappa f(mu) + <B(df), mu> + 1/2 <Q(d2f), mu x mu>
             + lam * sum_y F(y) [f(gamma(mu, y)) - f(mu)]

with ``B(g) = b . grad g + 1/2 tr((sigma^2 + tau^2) hess g)`` and Q either the
outer-product form ``(tau grad) x (tau grad)`` or the squared-difference form
``alpha(x, y) (g(x) - g(y))^2``. Jumps move every atom by the same mark, so they
enter once, through the pushforward ``gamma``; the per-atom jump term of
:func:`apply_B` is not added again inside :func:`apply_L`.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .coefficients import OUTER_PRODUCT, SQUARED_DIFFERENCE
from .measures import DiscreteMeasure


@dataclass(frozen=True)
class GeneratorReport:
    value: float
    kill: float
    drift: float
    diffusion: float
    jump: float

    @classmethod
    def from_parts(cls, kill, drift, diffusion, jump):
        kill, drift, diffusion, jump = float(kill), float(drift), float(diffusion), float(jump)
        return cls(kill + drift + diffusion + jump, kill, drift, diffusion, jump)

    @property
    def parts(self):
        return (self.kill, self.drift, self.diffusion, self.jump)

    @property
    def magnitude(self):
        return sum(abs(p) for p in self.parts)

    def to_json(self):
        return {"value": self.value, "kill": self.kill, "drift": self.drift, "diffusion": self.diffusion, "jump": self.jump}


def _check_dim(coeffs, mu):
    if mu.d != coeffs.d:
        raise ValueError(f"measure dimension {mu.d} does not match coefficient dimension {coeffs.d}")


def local_drift(coeffs, mu, X, grad, hess):
    """b . grad + 1/2 tr((sigma^2 + tau^2) hess) at the rows of X."""
    b = coeffs.drift_at(mu, X)
    D = coeffs.diffusion_at(mu, X)
    return np.einsum("md,md->m", b, grad) + 0.5 * np.einsum("mde,med->m", D, hess)


def jump_mean(coeffs, mu, g, X):
    """lam * sum_y F(y) (g(x + shift(mu, x, y)) - g(x)) at the rows of X."""
    jump = coeffs.jump
    if jump is None or jump.intensity == 0:
        return np.zeros(X.shape[0])
    base = g(X)
    out = np.zeros(X.shape[0])
    for y, Fy in zip(jump.marks.locations, jump.marks.weights):
        out += Fy * (g(X + jump.displacement(mu, X, y)) - base)
    return jump.intensity * out


def apply_B(coeffs, mu, g, include_jumps=True):
    """<B_mu(g), mu> for a spatial function g with ``evaluate(X, order)``.

    With ``include_jumps`` the mean jump displacement term is added per atom.
    """
    _check_dim(coeffs, mu)
    X = mu.locations
    _, grad, hess = g.evaluate(X, 2)
    vals = local_drift(coeffs, mu, X, grad, hess)
    if include_jumps:
        vals = vals + jump_mean(coeffs, mu, lambda Z: g.evaluate(Z)[0], X)
    return float(mu.weights @ vals)


def _q_outer(coeffs, mu, M, grads):
    # u_k = sum_i a_i tau(x_i)^T grad psi_k(x_i);  <Q(d2f), mu^2> = u^T M u (summed over coordinates)
    T = coeffs.tau_at(mu, mu.locations)
    u = np.einsum("i,ied,ike->kd", mu.weights, T, grads)
    return float(np.einsum("kd,kl,ld->", u, M, u))


def _q_sqdiff(coeffs, mu, M, vals):
    kind, c, ell = coeffs.alpha
    PM = vals @ M
    return kernels.sqdiff_pair_sum(mu.weights, mu.locations, vals, PM, kind, c, ell)


def apply_Q(coeffs, mu, f):
    """<Q_mu(d2f(mu)), mu x mu> computed from the closed-form structure of d2f."""
    _check_dim(coeffs, mu)
    s = f.derivative_structure(mu)
    if coeffs.q_kind == OUTER_PRODUCT:
        _, grads, _ = f.basis(mu.locations, 1)
        return _q_outer(coeffs, mu, s.M, grads)
    vals = f.basis(mu.locations)[0]
    return _q_sqdiff(coeffs, mu, s.M, vals)


def jump_part(coeffs, mu, f, value=None):
    jump = coeffs.jump
    if jump is None or jump.intensity == 0:
        return 0.0
    if value is None:
        value = f(mu)
    total = 0.0
    for y, Fy in zip(jump.marks.locations, jump.marks.weights):
        total += Fy * (f(pushforward(coeffs, mu, y)) - value)
    return jump.intensity * total


def pushforward(coeffs, mu, y):
    """gamma(mu, y): every atom shifted by the jump map at mark y."""
    return DiscreteMeasure._trusted(mu.locations + coeffs.jump.displacement(mu, mu.locations, y), mu.weights, mu.signed)


def apply_L(coeffs, mu, f, return_fields=False):
    """Full generator with its kill, drift, diffusion and jump parts.

    With ``return_fields`` also returns a dict with the derivative structure
    ``s``, the gradient ``g1`` and Hessian ``h1`` of d1 at the atoms and the
    basis gradients ``grads``, for callers that need them again.
    """
    _check_dim(coeffs, mu)
    X = mu.locations
    s = f.derivative_structure(mu)
    vals, grads, hess = f.basis(X, 2)
    g1 = np.einsum("k,mkd->md", s.alpha, grads)
    h1 = np.einsum("k,mkde->mde", s.alpha, hess)
    drift = float(mu.weights @ local_drift(coeffs, mu, X, g1, h1))
    if coeffs.q_kind == OUTER_PRODUCT:
        q = _q_outer(coeffs, mu, s.M, grads)
    else:
        q = _q_sqdiff(coeffs, mu, s.M, vals)
    kill = -coeffs.kill_rate(mu) * s.value
    rep = GeneratorReport.from_parts(kill, drift, 0.5 * q, jump_part(coeffs, mu, f, s.value))
    if return_fields:
        return rep, {"s": s, "g1": g1, "h1": h1, "grads": grads}
    return rep


# ----------------------------------------------------------------------------
# independent oracle


def _d_ds(h, step):
    """Richardson-extrapolated central first derivative of h at 0, and its roundoff level."""
    seen = []

    def level(e):
        hp, hm = h(e), h(-e)
        seen.extend((hp, hm))
        return (hp - hm) / (2.0 * e)

    val = (4.0 * level(step / 2.0) - level(step)) / 3.0
    # |4/3 * 2/step + 1/3 * 1/step| per unit of evaluation error
    return val, 3.0 * _EPS * max(abs(v) for v in seen) / step


def _d2_ds2(h, step):
    """Richardson-extrapolated central second derivative of h at 0, and its roundoff level."""
    h0 = h(0.0)
    seen = [h0]

    def level(e):
        hp, hm = h(e), h(-e)
        seen.extend((hp, hm))
        return (hp - 2.0 * h0 + hm) / (e * e)

    val = (4.0 * level(step / 2.0) - level(step)) / 3.0
    # 4/3 * 4 * 4/step^2 + 1/3 * 4/step^2 per unit of evaluation error
    return val, 23.0 * _EPS * max(abs(v) for v in seen) / (step * step)


_EPS = float(np.finfo(float).eps)


def _step(v, base=1e-3):
    return base / max(1.0, float(np.max(np.abs(v))) if np.size(v) else 1.0)


def oracle_L(coeffs, mu, f, with_resolution=False):
    """Lf(mu) from evaluations of f alone, without any closed-form derivative.

    Every term is a directional derivative of f along a perturbation of mu:

    * drift: all atoms move along their own drift vector,
      ``d/ds f(sum a_i delta_{x_i + s b_i})``;
    * idiosyncratic diffusion: a slice of weight eta of atom i moves along
      ``sigma_i e_j``; the second s-derivative equals ``eta A + eta^2 B`` exactly,
      and A (the local term) is recovered from eta = +a_i and eta = -a_i;
    * common diffusion: all atoms move along ``tau_i e_j``; half the second
      s-derivative summed over j is the tau part of B plus half of Q;
    * squared difference: ``d^2/de^2 f(mu + e (delta_{x_i} - delta_{x_j}))``
      is the Psi-contraction of d2f at the pair;
    * jumps and killing are evaluated directly.

    Returns ``(value, magnitude)`` with magnitude the sum of the absolute
    parts. With ``with_resolution`` a third entry bounds the roundoff in the
    finite differences: where Lf is smaller than that, f varies by less than
    its own last digits along the perturbations and the oracle cannot resolve it.
    """
    _check_dim(coeffs, mu)
    X = np.array(mu.locations)
    a = np.array(mu.weights)
    n, d = X.shape
    value = f(mu)

    def moved(disp, weights=a):
        return DiscreteMeasure._trusted(X + disp, weights, True)

    b = coeffs.drift_at(mu, X)
    drift, noise = _d_ds(lambda s: f(moved(s * b)), _step(b))

    S = coeffs.sigma_at(mu, X)
    sigma_part = 0.0
    for i in range(n):
        for j in range(d):
            v = S[i, :, j]
            if not np.any(v):
                continue
            step = _step(v)
            hs = []
            for eta in (a[i], -a[i]):
                w = np.append(a, eta)
                w[i] -= eta

                def h(s, v=v, w=w):
                    Y = np.vstack([X, X[i] + s * v])
                    return f(DiscreteMeasure._trusted(Y, w, True))

                val, err = _d2_ds2(h, step)
                hs.append(val / eta)
                noise += 0.25 * err
            sigma_part += 0.5 * a[i] * 0.5 * (hs[0] + hs[1])

    common = 0.0
    if coeffs.q_kind == OUTER_PRODUCT:
        T = coeffs.tau_at(mu, X)
        for j in range(d):
            V = T[:, :, j]
            if not np.any(V):
                continue
            val, err = _d2_ds2(lambda s, V=V: f(moved(s * V)), _step(V))
            common += 0.5 * val
            noise += 0.5 * err
        diffusion_total = sigma_part + common
    else:
        A = coeffs.alpha_at(X, X)
        q = 0.0
        for i in range(n):
            for k in range(i + 1, n):
                dirn = np.zeros(n)
                dirn[i], dirn[k] = 1.0, -1.0
                psi, err = _d2_ds2(lambda e, dirn=dirn: f(DiscreteMeasure._trusted(X, a + e * dirn, True)), 1e-3)
                q += 2.0 * a[i] * a[k] * A[i, k] * psi
                noise += a[i] * a[k] * abs(A[i, k]) * err
        diffusion_total = sigma_part + 0.5 * q

    kill = -coeffs.kill_rate(mu) * value
    jump = jump_part(coeffs, mu, f, value)
    if coeffs.jump is not None:
        noise += 2.0 * _EPS * coeffs.jump.intensity * max(abs(value), abs(jump))
    total = kill + drift + diffusion_total + jump
    magnitude = abs(kill) + abs(drift) + abs(sigma_part) + abs(diffusion_total - sigma_part) + abs(jump)
    if with_resolution:
        return total, magnitude, noise
    return total, magnitude
