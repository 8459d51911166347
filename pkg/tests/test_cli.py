import json
from pathlib import Path

import numpy as np
import pytest

from feedcap import channels
from feedcap.cli import main
from feedcap.codefunctions import InputDistribution
from feedcap.kernels import save_spec

SPECS = Path(__file__).resolve().parent.parent / "specs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def report(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def test_validate_good(capsys):
    rep = report(capsys, "validate", SPECS / "bsc01.json")
    assert rep["ok"] and rep["schema_version"] == 1
    assert rep["manifest"]["subcommand"] == "validate"
    assert len(rep["manifest"]["spec_sha256"]) == 64


def test_validate_bad_flag(capsys, tmp_path):
    d = channels.random_markov(np.random.default_rng(0)).to_dict()
    d["flags"] = ["state_from_output"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    code, _, err = run(capsys, "validate", p)
    assert code == 1
    assert json.loads(err)["flag"] == "state_from_output"


def test_validate_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "validate", tmp_path / "nope.json")
    assert code == 1 and json.loads(err)["exit_code"] == 1


def test_filter_csv(capsys, tmp_path):
    hist = tmp_path / "h.csv"
    hist.write_text("a,b\n0,1\n1,1\n")
    code, out, _ = run(capsys, "filter", SPECS / "gilbert_elliott.json", "--history", hist, "--format", "csv")
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 3
    assert lines[0].startswith("t,a,b,r_b0,r_b1,pi_s0")


def test_filter_impossible_history(capsys, tmp_path):
    hist = tmp_path / "h.csv"
    hist.write_text("0,1\n")
    code, _, err = run(capsys, "filter", SPECS / "noiseless.json", "--history", hist)
    assert code == 1 and json.loads(err)["error"] == "ZeroProbabilityObservation"


def test_dinfo(capsys):
    rep = report(capsys, "dinfo", SPECS / "bsc01.json", "--input", SPECS / "uniform_T3.json", "-T", 2)
    assert rep["value_bits"] == pytest.approx(1.062008, abs=1e-6)
    assert len(rep["per_step"]) == 2


def test_capacity_acoe_bsc(capsys, tmp_path):
    pol = tmp_path / "pol.json"
    rep = report(capsys, "capacity", SPECS / "bsc01.json", "--mode", "acoe", "--policy-out", pol)
    assert rep["V_star_bits"] == pytest.approx(0.5310, abs=1e-3)
    assert rep["alpha_mixing"] == 0 and pol.exists()
    sim = report(capsys, "simulate", SPECS / "bsc01.json", "--policy", pol, "-M", 4, "-T", 6, "--trials", 50,
                 "--seed", 2)
    assert sim["trials"] == 50 and 0 <= sim["error_rate"] <= 1


def test_capacity_finite(capsys, tmp_path):
    cert = tmp_path / "cert.json"
    rep = report(capsys, "capacity", SPECS / "noiseless.json", "--mode", "finite", "-T", 2, "--starts", 2,
                 "--certificate", cert)
    assert rep["value_bits"] == pytest.approx(1.0, abs=1e-9)
    law = InputDistribution.from_dict(json.loads(cert.read_text()), 2, 2)
    assert law.horizon == 2


def test_capacity_cap_exceeded(capsys):
    code, _, err = run(capsys, "capacity", SPECS / "huge.json", "--mode", "finite", "-T", 12)
    assert code == 3
    e = json.loads(err)
    assert e["error"] == "CapExceeded" and e["size"] > e["cap"]


def test_capacity_not_converged(capsys):
    code, _, err = run(capsys, "capacity", SPECS / "trapdoor.json", "--grid", 8, "--action-grid", 4,
                       "--max-iters", 2, "--eps", 1e-15)
    assert code == 2 and json.loads(err)["error"] == "NotConverged"


def test_capacity_flag_unsupported(capsys):
    code, _, err = run(capsys, "capacity", SPECS / "gilbert_elliott.json")
    assert code == 1 and json.loads(err)["error"] == "FlagUnsupported"


def test_mixing_csi(capsys):
    rep = report(capsys, "mixing", SPECS / "csi_switching.json", "--action-grid", 8)
    assert rep["alpha"] == pytest.approx(0.8, abs=1e-12) and rep["condition_holds"]


def test_simulate_input(capsys):
    rep = report(capsys, "simulate", SPECS / "noiseless.json", "--input", SPECS / "feedback_T3.json", "-M", 2,
                 "--trials", 100)
    assert rep["T"] == 3


def test_verify(capsys):
    rep = report(capsys, "verify", SPECS / "random2.json", "--input", SPECS / "feedback_T3.json")
    assert rep["ok"]
    assert {"conservation", "code_function_identity", "filter_sufficiency", "good_distribution",
            "induced_input", "belief_directed_information", "belief_reduction"} <= set(rep["checks"])


def test_verify_io_includes_decomposition(capsys):
    rep = report(capsys, "verify", SPECS / "io_memory.json", "--input", SPECS / "uniform_T3.json", "--horizon", 2)
    assert rep["checks"]["cost_decomposition"]["ok"]


def test_reports_stable_under_rerun(capsys, tmp_path):
    args = ("simulate", SPECS / "gilbert_elliott.json", "--input", SPECS / "feedback_T3.json", "-M", 4,
            "--trials", 200, "--seed", 5)
    r1, r2 = report(capsys, *args), report(capsys, *args)
    for r in (r1, r2):
        r["manifest"].pop("wall_time_s")
    assert r1 == r2


def test_twelve_significant_digits(capsys, tmp_path):
    spec = channels.bsc(1 / 3)
    p = tmp_path / "b.json"
    save_spec(spec, p)
    code, out, _ = run(capsys, "dinfo", p, "--input", SPECS / "uniform_T3.json", "-T", 1)
    value = json.loads(out)["value_bits"]
    assert len(repr(value).replace("0.", "").lstrip("0")) <= 12


def test_output_file(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, stdout, _ = run(capsys, "validate", SPECS / "trapdoor.json", "-o", out)
    assert code == 0 and stdout == ""
    assert json.loads(out.read_text())["flags"]["state_from_io"]["ok"]
