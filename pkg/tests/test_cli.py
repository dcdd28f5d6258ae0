import json
import subprocess
import sys

import numpy as np
import pytest

from signedbp import cli
from signedbp.ising import CoalescenceError


def run(args):
    return cli.main(args)


def test_no_command_is_config_error(capsys):
    with pytest.raises(SystemExit):
        run([])


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "signedbp.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "tune" in out.stdout and "kent-fit" in out.stdout


def test_tune_outputs(tmp_path):
    rc = run(["tune", "--gamma-max", "10000", "--lam-max", "120",
              "--out-dir", str(tmp_path)])
    assert rc == 0
    sweep = (tmp_path / "sweep.csv").read_text().splitlines()
    assert sweep[0].startswith("lam,")
    rec = json.loads((tmp_path / "recommendation.json").read_text())
    assert rec["lambda"] in (50, 100)
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "ct_sweep.png").exists()


def test_tune_no_figures(tmp_path):
    rc = run(["tune", "--gamma-max", "100", "--lam-max", "60",
              "--out-dir", str(tmp_path), "--no-figures"])
    assert rc == 0
    assert not (tmp_path / "ct_sweep.png").exists()


def test_ising_pipeline(tmp_path):
    sim = tmp_path / "sim"
    rc = run(["ising-simulate", "--L", "3", "--theta", "0.3",
              "--seed", "5", "--out-dir", str(sim)])
    assert rc == 0
    data = sim / "lattice.txt"
    assert data.exists()

    orc = tmp_path / "oracle"
    rc = run(["ising-oracle", "--data", str(data), "--out-dir", str(orc)])
    assert rc == 0
    oracle = json.loads((orc / "oracle.json").read_text())
    assert 0.0 < oracle["posterior_mean"] < 1.0

    fit = tmp_path / "fit"
    rc = run(["ising-fit", "--data", str(data), "--method", "bp",
              "--n-blocks", "5", "--ais-temps", "150",
              "--ais-particles", "10", "--n-iter", "600",
              "--burn-in", "100", "--seed", "1", "--out-dir", str(fit)])
    assert rc == 0
    summary = json.loads((fit / "summary.json").read_text())
    mean = summary["params"][0]["mean"]
    assert abs(mean - oracle["posterior_mean"]) < 0.15
    assert (fit / "chain.csv").exists()
    assert (fit / "trace.png").exists()
    assert (fit / "posterior.png").exists()

    rc = run(["diagnose", str(fit / "chain.csv"), "--burn-in", "100"])
    assert rc == 0


def test_ising_fit_exchange(tmp_path):
    sim = tmp_path / "sim"
    run(["ising-simulate", "--L", "3", "--theta", "0.2", "--seed", "2",
         "--out-dir", str(sim)])
    fit = tmp_path / "fit"
    rc = run(["ising-fit", "--data", str(sim / "lattice.txt"),
              "--method", "exchange", "--n-iter", "400",
              "--burn-in", "50", "--out-dir", str(fit), "--no-figures"])
    assert rc == 0
    summary = json.loads((fit / "summary.json").read_text())
    assert summary["negative_fraction"] == 0.0


def test_ising_oracle_rejects_big_lattice(tmp_path):
    sim = tmp_path / "sim"
    run(["ising-simulate", "--L", "5", "--theta", "0.2", "--seed", "3",
         "--out-dir", str(sim)])
    rc = run(["ising-oracle", "--data", str(sim / "lattice.txt"),
              "--out-dir", str(tmp_path / "o")])
    assert rc == 2


def test_missing_data_file_is_config_error(tmp_path):
    rc = run(["ising-fit", "--data", str(tmp_path / "nope.txt"),
              "--out-dir", str(tmp_path)])
    assert rc == 2


def test_numerical_failure_maps_to_3(tmp_path, monkeypatch):
    def bomb(*a, **k):
        raise CoalescenceError("no coalescence")

    monkeypatch.setattr(cli.ising, "perfect_sample", bomb)
    rc = run(["ising-simulate", "--L", "3", "--theta", "0.2",
              "--out-dir", str(tmp_path)])
    assert rc == 3


def test_kent_pipeline(tmp_path):
    sim = tmp_path / "sim"
    rc = run(["kent-simulate", "--kappa", "8", "--beta", "2", "--n", "120",
              "--seed", "4", "--out-dir", str(sim)])
    assert rc == 0
    data = sim / "data.csv"
    assert data.exists()
    assert (sim / "data.png").exists()

    for method in ("moment", "mle"):
        out = tmp_path / method
        rc = run(["kent-fit", "--data", str(data), "--method", method,
                  "--out-dir", str(out)])
        assert rc == 0
        est = json.loads((out / "estimate.json").read_text())
        assert est["kappa"] == pytest.approx(8.0, rel=0.5)

    bayes = tmp_path / "bayes"
    rc = run(["kent-fit", "--data", str(data), "--method", "bayes",
              "--n-iter", "500", "--burn-in", "100", "--seed", "1",
              "--out-dir", str(bayes), "--no-figures"])
    assert rc == 0
    summary = json.loads((bayes / "summary.json").read_text())
    names = [p["name"] for p in summary["params"]]
    assert names[0].startswith("theta_") or "kappa" in names[0]

    boot = tmp_path / "boot"
    rc = run(["kent-bootstrap", "--data", str(data), "--reps", "50",
              "--out-dir", str(boot)])
    assert rc == 0
    blob = json.loads((boot / "bootstrap.json").read_text())
    k = blob["kappa"]
    assert k["ci_lower"] < k["estimate"] < k["ci_upper"]


def test_kent_classify(tmp_path):
    # two overlapping groups; just exercise the full CV path
    from signedbp import kent
    from signedbp.rng import stream

    p1 = kent.KentParams(20.0, 2.0, 0.5, 0.4, 1.0)
    p2 = kent.KentParams(20.0, 2.0, 0.5, 2.7, 1.0)
    d1 = kent.sample(p1, 30, stream(50))
    d2 = kent.sample(p2, 30, stream(51))
    data = kent.SphericalData(
        points=np.vstack([d1.points, d2.points]),
        groups=np.array([1] * 30 + [2] * 30))
    path = tmp_path / "groups.csv"
    kent.save_spherical_csv(path, data)

    out = tmp_path / "cls"
    rc = run(["kent-classify", "--data", str(path), "--folds", "2",
              "--n-iter", "300", "--burn-in", "50", "--seed", "2",
              "--out-dir", str(out), "--no-figures"])
    assert rc == 0
    blob = json.loads((out / "classification.json").read_text())
    assert len(blob["fold_accuracy"]) == 2
    assert blob["mean_accuracy"] > 0.8


def test_diagnose_missing_file():
    assert run(["diagnose", "/no/such/chain.csv"]) == 2
