"""Levy-type generators on spaces of probability measures.

Evaluate generators on atomic measures, probe the positive maximum principle,
simulate McKean-Vlasov particle systems with common noise and common jumps,
and check martingale identities by Monte Carlo.
"""
__version__ = "0.1.0"

from .measures import (  # noqa: E402
    DiscreteMeasure,
    WeightedMeasure,
    WeightFunction,
    bl_distance,
    dw_distance,
    embed,
    integrate,
)
