"""Counter-based random streams keyed by (seed, stream, step).

Each draw site builds a Philox generator whose key is ``(seed, stream)`` and
whose counter has the step index in its third word, so any step of any
stream can be regenerated without replaying the others. Within one call the
draws are produced sequentially, so a draw of ``n`` values is a prefix of a
draw of ``m > n`` values at the same site.
"""
import numpy as np

COMMON = 0  # common Brownian increments
PARTICLES = 1  # idiosyncratic increments; row i belongs to particle i
EVENTS = 2  # killing clock
JUMP_SCHEDULE = 3  # jump times and marks over the whole horizon
BRIDGE = 4  # Brownian-bridge fills for steps split by jump times
INIT = 5  # initial particle positions

_MASK = (1 << 64) - 1


def check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError("seed must be an integer")
    seed = int(seed)
    if not 0 <= seed <= _MASK:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return seed


def generator(seed, stream, step=0):
    """numpy Generator for draw site (seed, stream, step)."""
    bitgen = np.random.Philox(key=np.array([seed & _MASK, stream], dtype=np.uint64),
                              counter=np.array([0, 0, step & _MASK, 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def normals(seed, stream, step, shape):
    return generator(seed, stream, step).standard_normal(shape)


def uniform(seed, stream, step):
    return float(generator(seed, stream, step).random())


def replication_seed(seed, rep):
    """Seed of replication ``rep``; independent of how replications are scheduled."""
    ss = np.random.SeedSequence([check_seed(seed), int(rep)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
