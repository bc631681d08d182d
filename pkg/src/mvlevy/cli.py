"""Command-line front end.

Every command reads one JSON config, validates it against a schema (unknown
keys are errors), writes ``report.json`` plus CSV data into ``--out`` and
returns an exit code: 0 pass, 1 configuration error, 2 failure or violation,
3 inconclusive.
"""
import argparse
import csv
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .coefficients import CoefficientError, CoefficientSet, catalog_listing
from .measures import DiscreteMeasure
from .pmp import pmp_probe, validate_conditions
from .simulate import (
    SimConfig,
    SimulationError,
    UnsupportedConfiguration,
    simulate_common_jumps,
    simulate_path,
    write_dw0,
)
from .testfn import BumpFunction, CylinderFunction, derivative_selftest
from . import verify

EXIT_PASS, EXIT_CONFIG, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# schemas

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POSINT = {"type": "integer", "minimum": 1}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1}

_DEFS = {
    "coefficients": {
        "oneOf": [
            {"type": "string"},
            {
                "type": "object",
                "properties": {"name": {"type": "string"}, "d": _POSINT, "params": {"type": "object"}},
                "required": ["name"],
                "additionalProperties": False,
            },
        ]
    },
    "measure": {
        "oneOf": [
            _NUM,
            {"type": "array", "items": _NUM, "minItems": 1},
            {
                "type": "object",
                "properties": {"d": _POSINT, "atoms": {"type": "array", "items": {"type": "array", "items": _NUM}, "minItems": 1}},
                "required": ["d", "atoms"],
                "additionalProperties": False,
            },
        ]
    },
    "bump": {
        "type": "object",
        "properties": {
            "kind": {"const": "bump"},
            "center": {"type": "array", "items": _NUM, "minItems": 1},
            "radius": _POS,
            "scale": _NUM,
        },
        "required": ["center"],
        "additionalProperties": False,
    },
    "function": {
        "type": "object",
        "properties": {
            "exp_weight": {"type": "boolean"},
            "p": _POS,
            "slots": {"type": "array", "minItems": 1, "items": {"type": "object"}},
            "outer": {"type": "object"},
        },
        "required": ["slots", "outer"],
        "additionalProperties": False,
    },
}


def _ref(name):
    return {"$ref": f"#/$defs/{name}"}


def _schema(props, required=()):
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$defs": _DEFS,
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


_SIM_PROPS = {
    "seed": _SEED,
    "coefficients": _ref("coefficients"),
    "N": _POSINT,
    "dt": _POS,
    "T": _POS,
    "init": _ref("measure"),
    "record_every": _POSINT,
    "moment_order": {"type": "integer", "minimum": 0, "maximum": 12},
    "noise_refinement": _POSINT,
    "sidecar": {"type": "boolean"},
}

COMMANDS = {
    "simulate": {
        "stochastic": True,
        "schema": _schema(_SIM_PROPS, ["coefficients", "N", "dt", "T"]),
        "defaults": {"init": 0.0, "record_every": 1, "moment_order": 4, "noise_refinement": 1, "sidecar": False},
    },
    "simulate-jumps": {
        "stochastic": True,
        "schema": _schema(dict(_SIM_PROPS, replications=_POSINT), ["coefficients", "N", "dt", "T"]),
        "defaults": {"init": 0.0, "record_every": 1, "moment_order": 4, "noise_refinement": 1, "sidecar": False,
                     "replications": 1},
    },
    "check-pmp": {
        "stochastic": True,
        "schema": _schema({"seed": _SEED, "coefficients": _ref("coefficients"), "trials": _POSINT, "K": _POSINT,
                           "restarts": _POSINT, "w_p": _POS}, ["coefficients"]),
        "defaults": {"trials": 200, "K": 8, "restarts": 6, "w_p": 2.0},
    },
    "check-conditions": {
        "stochastic": False,
        "schema": _schema({"coefficients": _ref("coefficients"), "w_p": _POS, "x_max": _POS,
                           "x_points": {"type": "integer", "minimum": 10}}, ["coefficients"]),
        "defaults": {"w_p": 2.0, "x_max": 1e6, "x_points": 121},
    },
    "verify-martingale": {
        "stochastic": True,
        "schema": _schema({
            "seed": _SEED, "coefficients": _ref("coefficients"), "function": _ref("function"), "init": _ref("measure"),
            "t": _POS, "M": {"type": "integer", "minimum": 2}, "N": _POSINT, "dt": _POS, "noise_refinement": _POSINT,
            "allowance": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
            "joint_phi": _ref("bump"), "refinement_study": {"type": "boolean"}, "check_preconditions": {"type": "boolean"},
        }, ["coefficients", "function"]),
        "defaults": {"init": 0.0, "t": 1.0, "M": 200, "N": 2000, "dt": 1e-3, "noise_refinement": 1,
                     "allowance": list(verify.ALLOWANCE), "joint_phi": None, "refinement_study": False,
                     "check_preconditions": True},
    },
    "verify-spde": {
        "stochastic": True,
        "schema": _schema({
            "seed": _SEED, "coefficients": _ref("coefficients"), "phi": _ref("bump"), "init": _ref("measure"),
            "N": _POSINT, "dt": _POS, "T": _POS, "paths": {"type": "integer", "minimum": 1},
            "band": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
        }, ["coefficients", "phi"]),
        "defaults": {"init": 0.0, "N": 1, "dt": 0.01, "T": 1.0, "paths": 50, "band": [1.2, 2.0]},
    },
    "verify-moments": {
        "stochastic": True,
        "schema": _schema({
            "seed": _SEED, "coefficients": _ref("coefficients"), "init": _ref("measure"),
            "k": {"type": "array", "items": _POSINT, "minItems": 1}, "t": _POS, "M": {"type": "integer", "minimum": 2},
            "N": _POSINT, "dt": _POS, "w_p": _POS,
        }, ["coefficients"]),
        "defaults": {"init": 0.0, "k": [1, 2], "t": 1.0, "M": 200, "N": 2000, "dt": 1e-3, "w_p": 2.0},
    },
    "moments-compare": {
        "stochastic": True,
        "schema": _schema({
            "seed": _SEED, "coefficients": _ref("coefficients"), "init": _ref("measure"),
            "K": {"type": "integer", "minimum": 0, "maximum": 6}, "N": _POSINT, "dt": _POS, "T": _POS,
            "reps": _POSINT, "study": {"type": "boolean"}, "factor": _POS,
        }, ["coefficients"]),
        "defaults": {"init": 0.0, "K": 4, "N": 10_000, "dt": 5e-4, "T": 1.0, "reps": 1, "study": False, "factor": 5.0},
    },
    "derivative-selftest": {
        "stochastic": False,
        "schema": _schema({"seed": _SEED, "instances": _POSINT, "tol_d1": _POS, "tol_d2": _POS}),
        "defaults": {"seed": 0, "instances": 1000, "tol_d1": 1e-6, "tol_d2": 1e-5},
    },
}


# ----------------------------------------------------------------------------
# config resolution


def load_config(command, path, seed=None, base=None):
    """Validate and complete a config; returns the resolved dict."""
    spec = COMMANDS[command]
    if path is None:
        raw = {}
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        base = Path(path).parent
    try:
        jsonschema.validate(raw, spec["schema"])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    cfg = dict(spec["defaults"])
    cfg.update(raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if spec["stochastic"] and "seed" not in cfg:
        raise ConfigError(f"{command} is stochastic: a seed is required (config key 'seed' or --seed)")
    if "coefficients" in cfg and isinstance(cfg["coefficients"], str):
        cfg["coefficients"] = _load_coefficient_file(cfg["coefficients"], base)
    return cfg


def _load_coefficient_file(name, base):
    p = Path(name)
    if not p.is_absolute() and base is not None:
        p = Path(base) / p
    try:
        obj = json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read coefficient file {p}: {exc}") from None
    try:
        jsonschema.validate(obj, _DEFS["coefficients"]["oneOf"][1])
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"coefficient file {p} invalid: {exc.message}") from None
    return obj


def build_coefficients(obj):
    try:
        return CoefficientSet.from_json(obj)
    except (KeyError, CoefficientError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad coefficients: {exc}") from None


def build_measure(obj, d):
    if isinstance(obj, dict):
        try:
            mu = DiscreteMeasure.from_json(obj)
        except ValueError as exc:
            raise ConfigError(f"bad measure: {exc}") from None
    else:
        z = np.atleast_1d(np.asarray(obj, dtype=float))
        if z.shape[0] == 1 and d > 1:
            z = np.full(d, z[0])
        mu = DiscreteMeasure.dirac(z)
    if mu.d != d:
        raise ConfigError(f"initial measure has dimension {mu.d}, coefficients have {d}")
    return mu


def build_function(obj):
    try:
        return CylinderFunction.from_json(obj)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad function: {exc}") from None


def build_bump(obj):
    return BumpFunction(obj["center"], obj.get("radius", 1.0), obj.get("scale", math.e))


# ----------------------------------------------------------------------------
# output


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    return obj


def write_report(out, command, cfg, status, result):
    report = {"command": command, "version": __version__, "config": cfg, "status": status, "result": result}
    (out / "report.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _moment_header(K, d):
    if d == 1:
        return [f"m{k}" for k in range(1, K + 1)]
    return [f"m{k}_x{j}" for k in range(1, K + 1) for j in range(d)]


def write_trajectory(path, tr, K, d):
    rows = []
    for r, t in enumerate(tr.times):
        rows.append([float(t)] + [float(v) for v in tr.moments[r, 1:, :].reshape(-1)] + [bool(tr.alive[r])])
    write_csv(path, ["t"] + _moment_header(K, d) + ["alive"], rows)


# ----------------------------------------------------------------------------
# commands


def _sim_config(cfg, cs):
    return SimConfig(N=cfg["N"], dt=cfg["dt"], T=cfg["T"], seed=cfg["seed"], coeffs=cs, init=build_measure(cfg["init"], cs.d),
                     record_every=cfg["record_every"], noise_refinement=cfg["noise_refinement"],
                     moment_order=cfg["moment_order"], record_positions=False)


def _config_error(exc):
    return ConfigError(str(exc))


def cmd_simulate(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    try:
        sc = _sim_config(cfg, cs)
        tr = simulate_path(sc)
    except (UnsupportedConfiguration, ValueError) as exc:
        raise _config_error(exc) from None
    write_trajectory(out / "trajectory.csv", tr, cfg["moment_order"], cs.d)
    if cfg["sidecar"]:
        write_dw0(out / "dW0.bin", tr.dW0, tr.dt)
    result = {"steps": sc.steps, "records": len(tr.times), "killed": tr.kill_time is not None, "kill_time": tr.kill_time,
              "final_moments": tr.moments[-1, 1:, :].tolist()}
    return "pass", result


def cmd_simulate_jumps(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    if cs.jump is None:
        raise ConfigError("simulate-jumps needs a coefficient set with a jump specification")
    from . import rng as streams

    counts, jump_rows = [], []
    for rep in range(cfg["replications"]):
        seed = cfg["seed"] if rep == 0 else streams.replication_seed(cfg["seed"], rep)
        try:
            sc = _sim_config(dict(cfg, seed=seed), cs)
            tr = simulate_common_jumps(sc)
        except (UnsupportedConfiguration, ValueError) as exc:
            raise _config_error(exc) from None
        if rep == 0:
            write_trajectory(out / "trajectory.csv", tr, cfg["moment_order"], cs.d)
            if cfg["sidecar"]:
                write_dw0(out / "dW0.bin", tr.dW0, tr.dt)
        counts.append(tr.jump_count)
        for t, y in zip(tr.jump_times, tr.jump_marks):
            jump_rows.append([rep, float(t)] + [float(v) for v in np.atleast_1d(y)])
    d_mark = cs.jump.marks.d
    write_csv(out / "jumps.csv", ["replication", "t"] + [f"y{j}" for j in range(d_mark)], jump_rows)
    write_csv(out / "counts.csv", ["replication", "jumps"], list(enumerate(counts)))
    expected = cs.jump.intensity * cfg["T"]
    counts = np.array(counts, dtype=float)
    result = {"replications": len(counts), "mean_jumps": float(counts.mean()), "expected_jumps": expected}
    if len(counts) > 1:
        se = float(counts.std(ddof=1) / np.sqrt(len(counts)))
        result["stderr"] = se
        result["count_check"] = bool(abs(counts.mean() - expected) <= 3 * max(se, 1e-300))
    return "pass", result


def cmd_check_pmp(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    verdict = pmp_probe(cs, trials=cfg["trials"], seed=cfg["seed"], K=cfg["K"], restarts=cfg["restarts"], w_p=cfg["w_p"],
                        workers=workers)
    rows = []
    for i, wt in enumerate(verdict.witnesses):
        rows.append([i, wt.f_value, wt.L_value, json.dumps(_clean(wt.mu.to_json()), sort_keys=True)])
    write_csv(out / "witnesses.csv", ["witness", "f", "Lf", "measure"], rows)
    status = {"pass": "pass", "violation": "fail", "inconclusive": "inconclusive"}[verdict.status]
    return status, verdict.to_json()


def cmd_check_conditions(cfg, out, workers):
    from .measures import WeightFunction

    cs = build_coefficients(cfg["coefficients"])
    rep = validate_conditions(cs, WeightFunction(cfg["w_p"]), x_max=cfg["x_max"], x_points=cfg["x_points"])
    write_csv(out / "fits.csv", ["gamma", "c", "sustained"],
              [[f["gamma"], f["c"], f["sustained"]] for f in rep["eq_ratio"]["fits"]])
    return rep["status"], rep


def _preconditions(cs):
    cond = validate_conditions(cs)
    if not cond["moment_gate"]:
        raise ConfigError("coefficients fail the growth preconditions (see check-conditions); run rejected")
    return cond


def cmd_verify_martingale(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    f = build_function(cfg["function"])
    mu0 = build_measure(cfg["init"], cs.d)
    result = {}
    if cfg["check_preconditions"]:
        result["conditions"] = _preconditions(cs)
    coefs = tuple(cfg["allowance"])
    phi = build_bump(cfg["joint_phi"]) if cfg["joint_phi"] is not None else None
    common = dict(t=cfg["t"], M=cfg["M"], N=cfg["N"], dt=cfg["dt"], seed=cfg["seed"], workers=workers,
                  noise_refinement=cfg["noise_refinement"], allowance_coefs=coefs)
    try:
        if phi is None:
            rep = verify.dynkin_residual(cs, f, mu0, **common)
        else:
            rep = verify.joint_dynkin_residual(cs, f, phi, mu0, **common)
    except (UnsupportedConfiguration, SimulationError, CoefficientError) as exc:
        raise _config_error(exc) from None
    write_csv(out / "residuals.csv", ["replication", "residual"], list(enumerate(rep.values)))
    result["residual"] = rep.to_json()
    passed = rep.passed
    if cfg["refinement_study"]:
        study = verify.refinement_study(cs, f, mu0, t=cfg["t"], M=cfg["M"], N=cfg["N"], dt=cfg["dt"], seed=cfg["seed"],
                                        workers=workers, joint_phi=phi)
        result["refinement"] = study
        rows = [[k, v["estimate"], v["stderr"]] for k, v in study["cells"].items()]
        write_csv(out / "refinement.csv", ["cell", "estimate", "stderr"], rows)
        passed = passed and study["monotone"]
    return ("pass" if passed else "fail"), result


def cmd_verify_spde(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    phi = build_bump(cfg["phi"])
    mu0 = build_measure(cfg["init"], cs.d)
    try:
        rep = verify.spde_refinement(cs, phi, mu0, N=cfg["N"], dt=cfg["dt"], T=cfg["T"], paths=cfg["paths"],
                                     seed=cfg["seed"], workers=workers, band=tuple(cfg["band"]))
    except (UnsupportedConfiguration, ValueError) as exc:
        raise _config_error(exc) from None
    rows = [[i, a, b] for i, (a, b) in enumerate(zip(rep["sups_dt"], rep["sups_dt2"]))]
    write_csv(out / "sup_residuals.csv", ["path", "sup_dt", "sup_dt_half"], rows)
    return ("pass" if rep["pass"] else "fail"), rep


def cmd_verify_moments(cfg, out, workers):
    from .measures import WeightFunction

    cs = build_coefficients(cfg["coefficients"])
    mu0 = build_measure(cfg["init"], cs.d)
    rep = verify.moment_bound_check(cs, mu0, k=cfg["k"], t=cfg["t"], M=cfg["M"], N=cfg["N"], dt=cfg["dt"], seed=cfg["seed"],
                                    workers=workers, w=WeightFunction(cfg["w_p"]))
    if rep["status"] == "rejected":
        raise ConfigError("coefficients fail the growth preconditions; moment bound check rejected")
    rows = [[o["k"], o["estimate"], o["stderr"], o["bound"], o["pass"]] for o in rep["orders"]]
    write_csv(out / "moments.csv", ["k", "estimate", "stderr", "bound", "pass"], rows)
    return rep["status"], rep


def cmd_moments_compare(cfg, out, workers):
    cs = build_coefficients(cfg["coefficients"])
    mu0 = build_measure(cfg["init"], cs.d)
    args = dict(K=cfg["K"], N=cfg["N"], dt=cfg["dt"], T=cfg["T"], seed=cfg["seed"], reps=cfg["reps"], workers=workers)
    try:
        if cfg["study"]:
            rep = verify.moment_convergence_study(cs, mu0, **args)
            blocks = [("N", rep["N"]), ("4N", rep["4N"])]
        else:
            rep = verify.moment_uniqueness_check(cs, mu0, factor=cfg["factor"], **args)
            blocks = [("N", rep)]
    except UnsupportedConfiguration as exc:
        raise _config_error(exc) from None
    rows = []
    for label, b in blocks:
        for r, sups in enumerate(b["per_rep"]):
            rows.append([label, b["N"], r] + list(sups))
    write_csv(out / "discrepancy.csv", ["cell", "N", "replication"] + [f"m{k}" for k in range(cfg["K"] + 1)], rows)
    return ("pass" if rep["pass"] else "fail"), rep


def cmd_derivative_selftest(cfg, out, workers):
    rep = derivative_selftest(cfg["instances"], cfg["seed"], cfg["tol_d1"], cfg["tol_d2"])
    rows = rep.pop("rows")
    write_csv(out / "selftest.csv", ["instance", "family", "d", "atoms", "err_d1", "err_d2", "cancellation"],
              [[r["instance"], r["family"], r["d"], r["atoms"], r["err_d1"], r["err_d2"], r["cancellation"]] for r in rows])
    return ("pass" if rep["pass"] else "fail"), rep


HANDLERS = {
    "simulate": cmd_simulate,
    "simulate-jumps": cmd_simulate_jumps,
    "check-pmp": cmd_check_pmp,
    "check-conditions": cmd_check_conditions,
    "verify-martingale": cmd_verify_martingale,
    "verify-spde": cmd_verify_spde,
    "verify-moments": cmd_verify_moments,
    "moments-compare": cmd_moments_compare,
    "derivative-selftest": cmd_derivative_selftest,
}

_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}


def _seed(text):
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError("seed must be an integer") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="mvlevy", description="Measure-valued Levy-type processes: simulation and checks.")
    parser.add_argument("--version", action="version", version=f"mvlevy {__version__}")
    parser.add_argument("--list-catalog", action="store_true", help="print the coefficient catalog and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--seed", type=_seed, metavar="U64", help="overrides the config seed")
        p.add_argument("--workers", type=int, default=1, metavar="N")
        p.add_argument("--out", default=".", metavar="DIR")
        p.add_argument("--list-catalog", action="store_true", help="print the coefficient catalog and exit")
    return parser


def _print_catalog():
    for item in catalog_listing():
        print(f"{item['name']:<22} {item['description']}")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_CONFIG
    if args.list_catalog:
        _print_catalog()
        return EXIT_PASS
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.config is None and args.command != "derivative-selftest":
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.command, args.config, args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        status, result = HANDLERS[args.command](cfg, out, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        # the run itself broke down (e.g. explosion): a failure, not a config error
        status, result = "fail", {"error": str(exc)}
    write_report(out, args.command, cfg, status, result)
    print(f"{args.command}: {status}")
    return _EXIT[status]


if __name__ == "__main__":
    sys.exit(main())
