"""Backend selection for the hot numerical kernels.

The compiled extension ``mvlevy._kernels`` is used when it was built; otherwise
the numpy versions in ``mvlevy._kernels_py`` are used. Both produce the same
numbers up to floating-point summation order.
"""
from contextlib import contextmanager

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

ALPHA_CONSTANT = _kernels_py.ALPHA_CONSTANT
ALPHA_GAUSSIAN = _kernels_py.ALPHA_GAUSSIAN

_backends = {"python": _kernels_py}
if _compiled is not None:
    _backends["compiled"] = _compiled

_active = _compiled if _compiled is not None else _kernels_py


def available_backends():
    return sorted(_backends)


def backend_name():
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def set_backend(name):
    global _active
    if name not in _backends:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active = _backends[name]


@contextmanager
def use_backend(name):
    previous = backend_name()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def weight_eval(X, p, order=0):
    return _active.weight_eval(X, p, order)


def bump_eval(X, center, radius, scale, order=0):
    return _active.bump_eval(X, center, radius, scale, order)


def sqdiff_pair_sum(a, X, P, PM, kind, c, ell):
    return _active.sqdiff_pair_sum(a, X, P, PM, kind, c, ell)
