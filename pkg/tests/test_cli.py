import csv
import hashlib
import json

import pytest

from proxtail import bounds, verify
from proxtail.cli import bound_fan_rows, main
from proxtail.solver import RateConstants


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


QUAD = {
    "problem": {"kind": "quadratic", "diag": [1.0, 0.25]},
    "noise": {"kind": "none"},
    "solver": {"k_max": 30},
}

LOGISTIC = {
    "problem": {"kind": "logistic", "M": 100, "n": 10, "seed": 7},
    "noise": {"kind": "subsample_without_replacement"},
    "schedule": {"lambda": 1.0, "beta": 0.91},
    "montecarlo": {"replicates": 10, "master_seed": 11},
}


def test_gen_data(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["gen-data", "--M", "100", "--n", "10", "--seed", "7", "--out", str(a)]) == 0
    assert main(["gen-data", "--M", "100", "--n", "10", "--seed", "7", "--out", str(b)]) == 0
    assert sha(a) == sha(b)
    assert capsys.readouterr().out.split()[0] == sha(a)
    assert len(a.read_text().splitlines()) == 101
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--M", "0", "--out", str(a)])
    assert info.value.code == 2


def test_gen_data_to_directory(tmp_path):
    assert main(["gen-data", "--M", "5", "--n", "2", "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "dataset.csv").exists()


def test_solve_noiseless(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", QUAD)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["violations"] == 0 and summary["max_pathwise_violation"] == 0.0
    with open(tmp_path / "o" / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 31 and rows[0]["run_id"] == "0"


def test_solve_logistic_saturates(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", LOGISTIC)
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_m"] == 100 and summary["violations"] == 0
    first = sha(out / "trajectory.csv")
    assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
    assert sha(out / "trajectory.csv") == first


def test_config_errors(tmp_path, capsys):
    bad = write_cfg(tmp_path / "c.json", {"noise": {"kind": "none"}})
    assert main(["solve", "--config", bad]) == 2
    assert "problem" in capsys.readouterr().err
    extra = write_cfg(tmp_path / "d.json", {**QUAD, "surprise": 1})
    assert main(["solve", "--config", extra]) == 2
    assert "surprise" in capsys.readouterr().err
    (tmp_path / "e.json").write_text("{not json")
    assert main(["solve", "--config", str(tmp_path / "e.json")]) == 2
    assert main(["solve"]) == 2
    nonsmooth_auto = {**QUAD, "problem": {"kind": "quadratic", "diag": [1.0], "nonsmooth": {"kind": "l1", "weight": 0.1}}}
    assert main(["solve", "--config", write_cfg(tmp_path / "f.json", nonsmooth_auto)]) == 2


def test_numeric_failure_exit_code(tmp_path, capsys):
    doc = {"problem": {"kind": "quadratic", "diag": [1.0]}, "noise": {"kind": "gaussian", "sigma": 1e200}, "solver": {"k_max": 5}}
    assert main(["solve", "--config", write_cfg(tmp_path / "c.json", doc), "--out", str(tmp_path)]) == 3
    assert "iteration" in capsys.readouterr().err


def test_montecarlo_outputs_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", LOGISTIC)
    names = ("quantiles.csv", "tails.csv", "tails_from_mean.csv", "expectation.csv", "manifest.json")
    digests = []
    for par in ("1", "4"):
        out = tmp_path / f"o{par}"
        assert main(["montecarlo", "--config", cfg, "--out", str(out), "--parallelism", par]) == 0
        digests.append([sha(out / n) for n in names])
    assert digests[0] == digests[1]
    with open(tmp_path / "o1" / "tails.csv") as fh:
        rows = list(csv.DictReader(fh))
    for k in {r["k"] for r in rows}:
        ps = [float(r["p_hat"]) for r in rows if r["k"] == k]
        assert all(a >= b for a, b in zip(ps, ps[1:]))
    manifest = json.loads((tmp_path / "o1" / "manifest.json").read_text())
    assert manifest["master_seed"] == 11 and "rho" in manifest["bound_parameters"]


def test_seed_flag_changes_output(tmp_path):
    cfg = write_cfg(tmp_path / "c.json", LOGISTIC)
    main(["montecarlo", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["montecarlo", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "12"])
    assert sha(tmp_path / "a" / "quantiles.csv") != sha(tmp_path / "b" / "quantiles.csv")


def test_bounds_command(tmp_path):
    assert main(["bounds", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "bounds.csv") as fh:
        rows = list(csv.DictReader(fh))
    curves = {r["bound_name"] for r in rows if r["bound_name"].startswith("main_tail")}
    assert len(curves) == 10
    assert {"expectation_k_form", "deterministic"} <= {r["bound_name"] for r in rows}
    c = RateConstants(0.9, 1 / 0.9, float("nan"), 1.0)
    for r in rows[:50]:
        if r["bound_name"].startswith("main_tail"):
            k, eps = int(r["k"]), float(r["epsilon"])
            assert eps >= bounds.main_threshold(k, 1.0, 0.9, 1, c)


def test_bounds_usage_errors(tmp_path):
    assert main(["bounds", "--rho", "1.5", "--out", str(tmp_path)]) == 2
    assert main(["bounds", "--rho", "0", "--out", str(tmp_path)]) == 2
    assert main(["bounds", "--tau", "0.5", "--out", str(tmp_path)]) == 2
    assert main(["bounds", "--probabilities", "0,1e-3", "--out", str(tmp_path)]) == 2


def test_bounds_from_lipschitz_and_tau():
    rows = bound_fan_rows(L=1.0, tau=1.0, beta=0.5, k_range=(1, 3), probabilities=[0.1])
    assert len(rows) == 3 * 4
    assert len(bound_fan_rows(beta=0.9, rho=0.9, k_range=(1, 2), probabilities=[0.1])) == 2 * 3  # no sharp form at beta = rho


def test_verify_suites(capsys):
    assert main(["verify", "--suite", "lemmas"]) == 0
    assert main(["verify", "--suite", "sampling"]) == 0
    assert main(["verify", "--suite", "bounds", "--grid", "coarse"]) == 0
    out = capsys.readouterr().out
    assert "pochhammer" in out.lower() and "FAIL" not in out


def test_verify_negative_control(monkeypatch, capsys):
    honest = verify.qpochhammer_slack
    monkeypatch.setattr(verify, "qpochhammer_slack", lambda x, y: -honest(x, y))
    assert main(["verify", "--suite", "bounds"]) == 1
    assert "'x':" in capsys.readouterr().out
