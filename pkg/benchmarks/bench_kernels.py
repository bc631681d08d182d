"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-repeat wall time per call for each kernel and backend, and the
largest absolute difference between the two backends' outputs.
"""
import argparse
import timeit

import numpy as np

from mvlevy import kernels


def _cases(rng):
    X1 = rng.normal(size=(20_000, 1)) * 2.0
    X2 = rng.normal(size=(20_000, 2)) * 2.0
    a = rng.dirichlet(np.ones(1500))
    Xp = rng.normal(size=(1500, 1))
    P = rng.normal(size=(1500, 3))
    PM = P @ np.diag([1.0, -0.5, 0.25])
    return {
        "weight_eval d=1 order=2": lambda: kernels.weight_eval(X1, 2.0, 2),
        "weight_eval d=2 order=2": lambda: kernels.weight_eval(X2, 3.0, 2),
        "bump_eval d=1 order=2": lambda: kernels.bump_eval(X1, np.zeros(1), 1.5, np.e, 2),
        "bump_eval d=2 order=2": lambda: kernels.bump_eval(X2, np.zeros(2), 1.5, np.e, 2),
        "sqdiff_pair_sum n=1500 gaussian": lambda: kernels.sqdiff_pair_sum(a, Xp, P, PM, kernels.ALPHA_GAUSSIAN, 1.0, 0.7),
    }


def _flatten(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(o) for o in out if o is not None])
    return np.ravel(np.asarray(out, dtype=float))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy timings are shown")
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<34}" + "".join(f"{b:>14}" for b in backends) + f"{'speedup':>10}{'max |diff|':>12}")
    for name, fn in cases.items():
        times, outs = {}, {}
        for b in backends:
            with kernels.use_backend(b):
                outs[b] = _flatten(fn())
                times[b] = min(timeit.repeat(fn, number=3, repeat=args.repeat)) / 3
        line = f"{name:<34}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends)
        if len(backends) == 2:
            speed = times["python"] / times["compiled"]
            diff = float(np.max(np.abs(outs["python"] - outs["compiled"])))
            line += f"{speed:>9.1f}x{diff:>12.2e}"
        print(line)


if __name__ == "__main__":
    main()
