"""Command line: config validation, exit codes, outputs and reproducibility."""
import json

import numpy as np
import pytest

from mvlevy import __version__
from mvlevy.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, main
from mvlevy.simulate import read_dw0
from mvlevy.verify import ALLOWANCE

SIM = {"seed": 3, "coefficients": {"name": "ou_mean_field"}, "N": 20, "dt": 0.01, "T": 0.2}
DW_LINEAR = {"slots": [{"kind": "bump", "center": [0.0], "radius": 1.0, "scale": float(np.e)}],
             "outer": {"kind": "polynomial", "terms": [[1.0, [1]]]}, "p": 2.0}


@pytest.fixture
def run(tmp_path):
    def _run(command, cfg=None, *extra, out="out"):
        argv = [command, "--out", str(tmp_path / out)]
        if cfg is not None:
            path = tmp_path / f"{out}.json"
            path.write_text(json.dumps(cfg))
            argv += ["--config", str(path)]
        return main(argv + list(extra)), tmp_path / out
    return _run


def report(out):
    return json.loads((out / "report.json").read_text())


def test_simulate_writes_outputs(run):
    code, out = run("simulate", dict(SIM, sidecar=True))
    assert code == EXIT_PASS
    rep = report(out)
    assert rep["version"] == __version__
    assert rep["config"]["N"] == 20 and rep["config"]["moment_order"] == 4
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,m1,m2,m3,m4,alive"
    assert len(lines) == 1 + 21
    dW0, dt = read_dw0(out / "dW0.bin")
    assert dW0.shape == (20, 1) and dt == 0.01


def test_simulate_rerun_byte_identical(run):
    _, a = run("simulate", SIM, out="a")
    _, b = run("simulate", SIM, out="b")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_seed_flag_overrides_config(run):
    _, a = run("simulate", SIM, "--seed", "99", out="a")
    _, b = run("simulate", dict(SIM, seed=99), out="b")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert report(a)["config"]["seed"] == 99


def test_missing_seed_is_config_error(run):
    cfg = {k: v for k, v in SIM.items() if k != "seed"}
    assert run("simulate", cfg)[0] == EXIT_CONFIG


def test_unknown_key_is_config_error(run):
    assert run("simulate", dict(SIM, particles=10))[0] == EXIT_CONFIG


def test_bad_value_is_config_error(run):
    assert run("simulate", dict(SIM, N=0))[0] == EXIT_CONFIG
    assert run("simulate", dict(SIM, dt=0.03))[0] == EXIT_CONFIG  # T not a multiple of dt


def test_missing_config_is_config_error(run):
    assert run("simulate")[0] == EXIT_CONFIG


def test_unknown_catalog_name(run):
    assert run("simulate", dict(SIM, coefficients={"name": "nope"}))[0] == EXIT_CONFIG


def test_list_catalog(capsys):
    assert main(["--list-catalog"]) == EXIT_PASS
    text = capsys.readouterr().out
    assert "ou_mean_field" in text and "negative_killing" in text


def test_derivative_selftest_default_seed(run):
    code, out = run("derivative-selftest", {"instances": 30})
    assert code == EXIT_PASS
    assert report(out)["config"]["seed"] == 0
    assert len((out / "selftest.csv").read_text().splitlines()) == 31


def test_check_pmp_zero_passes(run):
    code, out = run("check-pmp", {"seed": 1, "coefficients": {"name": "zero"}, "trials": 4, "K": 3, "restarts": 2})
    assert code == EXIT_PASS
    assert (out / "witnesses.csv").read_text().splitlines() == ["witness,f,Lf,measure"]


def test_check_pmp_negative_killing_fails(run):
    code, out = run("check-pmp", {"seed": 1, "coefficients": {"name": "negative_killing"}, "trials": 6, "K": 3,
                                  "restarts": 2})
    assert code == EXIT_FAIL
    assert len((out / "witnesses.csv").read_text().splitlines()) > 1


def test_check_conditions(run):
    assert run("check-conditions", {"coefficients": {"name": "ou_mean_field"}}, out="a")[0] == EXIT_PASS
    assert run("check-conditions", {"coefficients": {"name": "cubic_drift"}}, out="b")[0] == EXIT_FAIL


def test_verify_martingale_zero(run):
    cfg = {"seed": 1, "coefficients": {"name": "zero"}, "function": DW_LINEAR, "M": 4, "N": 10, "dt": 0.05, "t": 0.2}
    code, out = run("verify-martingale", cfg)
    assert code == EXIT_PASS
    res = report(out)["result"]["residual"]
    assert res["estimate"] == 0.0
    assert report(out)["config"]["allowance"] == list(ALLOWANCE)


def test_verify_martingale_rejects_superlinear(run):
    cfg = {"seed": 1, "coefficients": {"name": "superlinear_drift"}, "function": DW_LINEAR, "M": 4, "N": 10}
    assert run("verify-martingale", cfg)[0] == EXIT_CONFIG


def test_verify_spde_zero(run):
    cfg = {"seed": 1, "coefficients": {"name": "zero"}, "phi": {"center": [0.0], "radius": 3.0}, "T": 0.1, "paths": 2}
    code, out = run("verify-spde", cfg)
    assert code == EXIT_PASS
    assert report(out)["result"]["exact_zero"] is True


def test_verify_moments_rejected_is_config_error(run):
    cfg = {"seed": 1, "coefficients": {"name": "superlinear_drift"}, "M": 4, "N": 10, "dt": 0.05, "t": 0.2}
    assert run("verify-moments", cfg)[0] == EXIT_CONFIG


def test_moments_compare_nonaffine_is_config_error(run):
    cfg = {"seed": 1, "coefficients": {"name": "tanh_mean_field"}, "N": 10, "dt": 0.01, "T": 0.1}
    assert run("moments-compare", cfg)[0] == EXIT_CONFIG


def test_simulate_jumps_counts(run):
    cfg = dict(SIM, coefficients={"name": "common_shift_jump", "params": {"intensity": 3.0}}, replications=20)
    code, out = run("simulate-jumps", cfg)
    assert code == EXIT_PASS
    counts = (out / "counts.csv").read_text().splitlines()
    assert counts[0] == "replication,jumps" and len(counts) == 21
    assert report(out)["result"]["expected_jumps"] == pytest.approx(0.6)


def test_simulate_jumps_needs_jump_spec(run):
    assert run("simulate-jumps", SIM)[0] == EXIT_CONFIG


def test_coefficient_file_reference(run, tmp_path):
    (tmp_path / "coef.json").write_text(json.dumps({"name": "ou_mean_field"}))
    _, a = run("simulate", dict(SIM, coefficients="coef.json"), out="a")
    _, b = run("simulate", SIM, out="b")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
