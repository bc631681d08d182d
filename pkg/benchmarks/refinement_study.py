"""Fit the Dynkin bias allowance ``a * dt + b / sqrt(N)`` on the OU fixture.

Runs the coupled (dt, N) refinement study over {dt, dt/2} x {N, 4N}, fits
nonnegative (a, b) to the absolute residuals by least squares and multiplies
by a safety factor. The printed pair is what ``mvlevy.verify.ALLOWANCE`` holds.

Usage::

    python3 benchmarks/refinement_study.py [--M 100] [--seed 7] [--workers 1]
"""
import argparse
import json
import time

import numpy as np
from scipy.optimize import nnls

from mvlevy.coefficients import catalog
from mvlevy.measures import WeightFunction
from mvlevy.testfn import BumpFunction, CylinderFunction
from mvlevy.verify import refinement_study


def fit_allowance(cells, safety=2.0):
    """cells: list of (dt, N, |estimate|, stderr). Returns (a, b) times ``safety``."""
    A = np.array([[dt, 1.0 / np.sqrt(N)] for dt, N, _, _ in cells])
    # upper envelope: a 3-sigma band keeps the fit from chasing noise below it
    y = np.array([est + 3.0 * se for _, _, est, se in cells])
    coef, _ = nnls(A, y)
    return tuple(float(c * safety) for c in coef)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--M", type=int, default=100)
    parser.add_argument("--N", type=int, default=2000)
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--safety", type=float, default=2.0)
    args = parser.parse_args(argv)

    cs = catalog("ou_mean_field")
    f = CylinderFunction.linear(BumpFunction([0.0]), WeightFunction(2.0))
    t0 = time.time()
    study = refinement_study(cs, f, 0.0, M=args.M, N=args.N, dt=args.dt, seed=args.seed, workers=args.workers)
    cells = []
    for label, rep in study["cells"].items():
        dt = float(label.split(",")[0].split("=")[1])
        N = int(label.split(",")[1].split("=")[1])
        cells.append((dt, N, abs(rep["estimate"]), rep["stderr"]))
        print(f"{label:<22} estimate {rep['estimate']:+.3e}  stderr {rep['stderr']:.2e}")
    a, b = fit_allowance(cells, args.safety)
    print(f"monotone: {study['monotone']}")
    print(json.dumps({"allowance": [a, b], "M": args.M, "seed": args.seed, "seconds": round(time.time() - t0, 1)}))


if __name__ == "__main__":
    main()
