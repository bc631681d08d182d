"""Particle simulation of McKean-Vlasov dynamics with common noise and jumps.

N exchangeable particles follow::

    dZ = b(mu_N, Z) dt + sigma(mu_N, Z) dW + tau(mu_N, Z) dW0 + common jumps

with mu_N the empirical measure frozen at the left end of each step
(Euler-Maruyama). The whole system is killed by one clock of rate
``kappa(mu_N)``; after that the state is frozen. Jump times are exact
exponential clocks; a step containing jump times is split there and its
Brownian increments are distributed over the pieces by a Brownian bridge,
so the grid noise is the same with and without jumps.

All randomness comes from :mod:`mvlevy.rng` counter streams, so the common
increments can be replayed by the moment integrator and runs with N and 4N
particles share their first N particle paths' noise.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from . import rng as streams
from .measures import DiscreteMeasure


class SimulationError(RuntimeError):
    pass


class UnsupportedConfiguration(ValueError):
    pass


@dataclass
class SimConfig:
    """Simulation parameters.

    ``init`` is either a point (all particles start there) or a
    DiscreteMeasure from which initial positions are sampled i.i.d.
    ``noise_refinement = r`` builds each step's increments from r finer draws,
    so a run with (dt, r = 2) uses exactly the noise of a run with (dt / 2, r = 1).
    """

    N: int
    dt: float
    T: float
    seed: int
    coeffs: object
    init: object = 0.0
    record_every: int = 1
    noise_refinement: int = 1
    moment_order: int = 4
    record_positions: bool = True
    permutation: object = None  # optional row permutation of the particle stream

    def __post_init__(self):
        self.seed = streams.check_seed(self.seed)
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ValueError("N must be a positive integer")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not self.T >= self.dt:
            raise ValueError("T must be at least dt")
        steps = int(round(self.T / self.dt))
        if abs(steps * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError("T must be an integer multiple of dt")
        if self.record_every < 1 or self.noise_refinement < 1:
            raise ValueError("record_every and noise_refinement must be positive")
        if not isinstance(self.init, DiscreteMeasure):
            z = np.atleast_1d(np.asarray(self.init, dtype=float))
            if z.shape[0] == 1 and self.coeffs.d > 1:
                z = np.full(self.coeffs.d, z[0])
            self.init = DiscreteMeasure.dirac(z)
        if self.init.d != self.coeffs.d:
            raise ValueError("initial measure dimension does not match the coefficients")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def d(self):
        return self.coeffs.d


@dataclass
class ParticleState:
    t: float
    positions: np.ndarray
    alive: bool = True
    common_path: np.ndarray = None

    def __post_init__(self):
        if self.common_path is None:
            self.common_path = np.zeros(self.positions.shape[1])

    def measure(self):
        return empirical(self.positions)


@dataclass
class Trajectory:
    """Recorded path of one replication.

    ``moments[r, k, j]`` is the k-th raw moment of coordinate j at
    ``times[r]``; ``positions`` holds the recorded particle arrays when
    requested. ``dW0`` has one row per time step.
    """

    times: np.ndarray
    moments: np.ndarray
    alive: np.ndarray
    dW0: np.ndarray
    dt: float
    positions: list = None
    jump_times: list = field(default_factory=list)
    jump_marks: list = field(default_factory=list)
    kill_time: float = None

    def measures(self):
        if self.positions is None:
            raise ValueError("positions were not recorded")
        return [empirical(X) for X in self.positions]

    @property
    def jump_count(self):
        return len(self.jump_times)

    @property
    def common_path(self):
        return np.vstack([np.zeros((1, self.dW0.shape[1])), np.cumsum(self.dW0, axis=0)])


def empirical(X):
    n = X.shape[0]
    return DiscreteMeasure._trusted(X, np.full(n, 1.0 / n))


def raw_moments(X, K):
    out = np.empty((K + 1, X.shape[1]))
    out[0] = 1.0
    p = np.ones_like(X)
    for k in range(1, K + 1):
        p = p * X
        out[k] = p.mean(axis=0)
    return out


# ----------------------------------------------------------------------------
# single Euler step


def _noise_displacement(coeffs, mu, X, dW, dW0):
    disp = np.einsum("nij,nj->ni", coeffs.sigma_at(mu, X), dW)
    if coeffs.has_common_noise:
        disp += np.einsum("nij,j->ni", coeffs.tau_at(mu, X), dW0)
    return disp


def _check_finite(X, step):
    if not np.all(np.isfinite(X)):
        i = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
        raise SimulationError(f"particle {i} has non-finite position after step {step}")


def step_euler(state, coeffs, dW_common, dW, dt, kill_uniform=None, step=0):
    """One Euler-Maruyama step of the whole particle system.

    ``dW`` holds the idiosyncratic increments (N x d), ``dW_common`` the common
    one (d,). ``kill_uniform`` in [0, 1) decides the killing clock; the system
    dies when it is below ``1 - exp(-kappa dt)``.
    """
    if not state.alive:
        return state
    X = state.positions
    mu = empirical(X)
    kappa = coeffs.kill_rate(mu)
    if kappa > 0 and kill_uniform is not None and kill_uniform < -np.expm1(-kappa * dt):
        return ParticleState(state.t + dt, X, False, state.common_path)
    dW_common = np.asarray(dW_common, dtype=float)
    Xn = X + coeffs.drift_at(mu, X) * dt + _noise_displacement(coeffs, mu, X, dW, dW_common)
    _check_finite(Xn, step)
    return ParticleState(state.t + dt, Xn, True, state.common_path + dW_common)


# ----------------------------------------------------------------------------
# observers


class Observer:
    """Hooks called by the integrator; override the ones you need."""

    def on_grid(self, k, t, X, alive):
        pass

    def on_kill(self, k, t, X, prob, killed):
        pass

    def on_diffusion(self, t, h, X, noise):
        pass

    def on_jump(self, t, y, X_before, X_after):
        pass


class _Recorder(Observer):
    def __init__(self, config):
        self.config = config
        self.times, self.moments, self.alive, self.positions = [], [], [], []

    def on_grid(self, k, t, X, alive):
        c = self.config
        if k % c.record_every == 0 or k == c.steps:
            self.times.append(t)
            self.moments.append(raw_moments(X, c.moment_order))
            self.alive.append(alive)
            if c.record_positions:
                self.positions.append(X.copy())


# ----------------------------------------------------------------------------
# integrator


def initial_positions(config):
    mu0 = config.init
    N, d = config.N, config.d
    if mu0.n == 1:
        return np.repeat(mu0.locations, N, axis=0).astype(float)
    u = streams.generator(config.seed, streams.INIT, 0).random(N)
    cdf = np.cumsum(mu0.weights)
    cdf /= cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), mu0.n - 1)
    return np.array(mu0.locations[idx], dtype=float).reshape(N, d)


def jump_schedule(config):
    """Exact Poisson event times on [0, T) with marks drawn from F."""
    jump = config.coeffs.jump
    if jump is None or jump.intensity == 0:
        return np.empty(0), np.empty((0, 1))
    gen = streams.generator(config.seed, streams.JUMP_SCHEDULE, 0)
    cdf = np.cumsum(jump.marks.weights)
    cdf /= cdf[-1]
    times, marks = [], []
    t = 0.0
    while True:
        t += gen.exponential(1.0 / jump.intensity)
        u = gen.random()
        if t >= config.T:
            break
        times.append(t)
        marks.append(jump.marks.locations[min(int(np.searchsorted(cdf, u, side="right")), jump.marks.n - 1)])
    return np.array(times), np.array(marks).reshape(len(times), jump.marks.d)


def _step_noise(config, k):
    r = config.noise_refinement
    d, N = config.d, config.N
    scale = np.sqrt(config.dt / r)
    dW0 = np.zeros(d)
    dW = np.zeros((N, d))
    for s in range(r):
        j = k * r + s
        dW0 += streams.normals(config.seed, streams.COMMON, j, d)
        dW += streams.normals(config.seed, streams.PARTICLES, j, (N, d))
    dW0 *= scale
    dW *= scale
    if config.permutation is not None:
        dW = dW[config.permutation]
    return dW0, dW


def _bridge_pieces(dW0, dW, cuts, h, xi0, xi):
    """Split increments over [0, h] at interior cut points by Brownian bridge."""
    pieces = []
    rem0, rem = dW0.copy(), dW.copy()
    u = 0.0
    for m, v in enumerate(list(cuts) + [h]):
        if m == len(cuts):
            pieces.append((v - u, rem0, rem))
            break
        frac = (v - u) / (h - u)
        sd = np.sqrt((v - u) * (h - v) / (h - u))
        p0 = frac * rem0 + sd * xi0[m]
        p = frac * rem + sd * xi[m]
        pieces.append((v - u, p0, p))
        rem0 = rem0 - p0
        rem = rem - p
        u = v
    return pieces


def integrate(config, observers=(), allow_jumps=True):
    """Run one replication, calling observers along the way; returns a Trajectory."""
    cs = config.coeffs
    if cs.jump is not None and cs.jump.intensity > 0 and not allow_jumps:
        raise UnsupportedConfiguration("coefficient set has jumps; use simulate_common_jumps")
    rec = _Recorder(config)
    obs = [rec] + list(observers)
    X = initial_positions(config)
    N, d, h = config.N, config.d, config.dt
    steps = config.steps
    jt, jm = jump_schedule(config) if allow_jumps else (np.empty(0), np.empty((0, 1)))
    jptr = 0
    alive = True
    kill_time = None
    dW0_all = np.empty((steps, d))
    for k in range(steps):
        t = k * h
        for o in obs:
            o.on_grid(k, t, X, alive)
        dW0, dW = _step_noise(config, k)
        dW0_all[k] = dW0
        if not alive:
            continue
        mu = empirical(X)
        kappa = cs.kill_rate(mu)
        if kappa != 0:
            if kappa < 0:
                raise SimulationError("negative kill rate cannot be simulated")
            prob = -np.expm1(-kappa * h)
            killed = streams.uniform(config.seed, streams.EVENTS, k) < prob
            for o in obs:
                o.on_kill(k, t, X, prob, killed)
            if killed:
                alive = False
                kill_time = t
                continue
        # jump times falling in [t, t + h)
        cuts = []
        while jptr + len(cuts) < len(jt) and jt[jptr + len(cuts)] < t + h:
            cuts.append(jt[jptr + len(cuts)] - t)
        if not cuts:
            noise = _noise_displacement(cs, mu, X, dW, dW0)
            for o in obs:
                o.on_diffusion(t, h, X, noise)
            X = X + cs.drift_at(mu, X) * h + noise
            _check_finite(X, k)
            continue
        g = streams.generator(config.seed, streams.BRIDGE, k)
        xi0 = g.standard_normal((len(cuts), d))
        xi = g.standard_normal((len(cuts), N, d))
        if config.permutation is not None:
            xi = xi[:, config.permutation]
        pieces = _bridge_pieces(dW0, dW, cuts, h, xi0, xi)
        s = t
        for m, (hp, p0, p) in enumerate(pieces):
            if hp > 0:
                mu = empirical(X)
                noise = _noise_displacement(cs, mu, X, p, p0)
                for o in obs:
                    o.on_diffusion(s, hp, X, noise)
                X = X + cs.drift_at(mu, X) * hp + noise
                _check_finite(X, k)
            s += hp
            if m < len(cuts):
                y = jm[jptr]
                mu = empirical(X)
                Xj = X + cs.jump.displacement(mu, X, y)
                for o in obs:
                    o.on_jump(jt[jptr], y, X, Xj)
                X = Xj
                jptr += 1
    for o in obs:
        o.on_grid(steps, steps * h, X, alive)
    return Trajectory(
        times=np.array(rec.times),
        moments=np.array(rec.moments),
        alive=np.array(rec.alive),
        dW0=dW0_all,
        dt=h,
        positions=rec.positions if config.record_positions else None,
        jump_times=list(jt[:jptr]),
        jump_marks=[m for m in jm[:jptr]],
        kill_time=kill_time,
    )


def simulate_path(config, observers=()):
    """Particle trajectory without jumps; deterministic in (config, seed)."""
    return integrate(config, observers, allow_jumps=False)


def simulate_common_jumps(config, observers=()):
    """Particle trajectory with common Poisson jumps (requires a jump spec)."""
    jump = config.coeffs.jump
    if jump is None:
        raise UnsupportedConfiguration("coefficient set has no jump specification")
    if jump.intensity * config.dt > 0.1:
        raise UnsupportedConfiguration("step too large for the jump intensity (need lambda * dt <= 0.1)")
    return integrate(config, observers, allow_jumps=True)


# ----------------------------------------------------------------------------
# closed moment system


def _affine_params(coeffs):
    if coeffs.d != 1 or coeffs.affine is None or coeffs.jump is not None:
        raise UnsupportedConfiguration("moment system needs d = 1 affine drift with constant sigma and tau")
    a = coeffs.affine
    return a["b0"], a["b1"], a["b2"], a["sigma"], a["tau"]


def moment_sde_path(coeffs, K, m0, dW0, dt, kill=False):
    """Euler-Maruyama for the closed moment system driven by recorded dW0.

    ``m0`` is the vector of initial raw moments ``m_0..m_K`` (m_0 = 1) or an
    initial DiscreteMeasure. Returns an array of shape ``(steps + 1, K + 1)``.
    """
    b0, b1, b2, sigma, tau = _affine_params(coeffs)
    if isinstance(m0, DiscreteMeasure):
        m0 = np.array([float(m0.weights @ m0.locations[:, 0] ** k) for k in range(K + 1)])
    m = np.array(m0, dtype=float)[: K + 1]
    if m.shape[0] != K + 1:
        raise ValueError("need K + 1 initial moments")
    dW0 = np.asarray(dW0, dtype=float).reshape(-1)
    out = np.empty((dW0.shape[0] + 1, K + 1))
    out[0] = m
    i = np.arange(K + 1, dtype=float)
    diff2 = sigma ** 2 + tau ** 2
    for s, dw in enumerate(dW0):
        mm1 = np.concatenate([[0.0], m[:-1]])
        mm2 = np.concatenate([[0.0, 0.0], m[:-2]])[: K + 1]
        drift = i * (b0 + b2 * m[1] if K >= 1 else b0) * mm1 + i * b1 * m + 0.5 * i * (i - 1) * diff2 * mm2
        m = m + drift * dt + i * tau * mm1 * dw
        m[0] = 1.0
        out[s + 1] = m
    return out


# ----------------------------------------------------------------------------
# common-noise sidecar

SIDECAR_MAGIC = b"MVDW0\x00\x01\x00"
_HEADER = struct.Struct("<8sQQd")  # magic, steps, d, dt


def write_dw0(path, dW0, dt):
    """Write common increments as little-endian float64 after a (steps, d, dt) header."""
    dW0 = np.ascontiguousarray(np.asarray(dW0, dtype="<f8"))
    if dW0.ndim == 1:
        dW0 = dW0[:, None]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SIDECAR_MAGIC, dW0.shape[0], dW0.shape[1], float(dt)))
        fh.write(dW0.tobytes())


def read_dw0(path):
    """Inverse of :func:`write_dw0`; returns ``(dW0, dt)`` with dW0 of shape (steps, d)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("sidecar too short for its header")
    magic, steps, d, dt = _HEADER.unpack_from(raw)
    if magic != SIDECAR_MAGIC:
        raise ValueError("not a common-noise sidecar")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != steps * d:
        raise ValueError(f"sidecar holds {body.size} values, header says {steps} x {d}")
    return body.reshape(steps, d).astype(float), dt
