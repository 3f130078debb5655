import csv
import json
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ldtprob.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

COARSE = """\
problem: tsunami
seed: 3
mesh: {K: 64}
time: {T_F: 1500.0}
objective: {lam: 12.0, lam_grid: [12, 24]}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(cmd, config, out, *extra):
    return main([cmd, "--config", str(config), "--out", str(out), "--workers", "1", *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_zero_slips_has_flat_observable(tmp_path):
    cfg = write(tmp_path, COARSE)
    assert run("solve", cfg, tmp_path / "o") == EXIT_OK
    obs = read_csv(tmp_path / "o" / "observable.csv")
    assert max(abs(float(r["f_ob"])) for r in obs) <= 1e-8
    summary = json.loads((tmp_path / "o" / "solve.json").read_text())
    assert summary["mass_drift"] <= 1e-12
    for name in ("trajectory.csv", "bathymetry.csv", "basis.csv", "slips.csv", "manifest.json"):
        assert (tmp_path / "o" / name).exists()


def test_solve_sample_slips_perturb_both_ways(tmp_path):
    cfg = write(tmp_path, COARSE + "solve: {sample: 1}\n")
    assert run("solve", cfg, tmp_path / "o") == EXIT_OK
    B = read_csv(tmp_path / "o" / "bathymetry.csv")
    B0 = read_csv(tmp_path / "o" / "bathymetry_B0.csv")
    d = np.array([float(a["B"]) - float(b["B"]) for a, b in zip(B, B0)])
    assert d.max() > 0 > d.min()


def test_solve_explicit_slips_length_checked(tmp_path):
    cfg = write(tmp_path, COARSE + "solve: {slips: [1.0, 2.0]}\n")
    assert run("solve", cfg, tmp_path / "o") == EXIT_CONFIG


def test_missing_key_exits_2_and_names_it(tmp_path, capsys):
    cfg = write(tmp_path, "seed: 1\n")
    assert run("solve", cfg, tmp_path / "o") == EXIT_CONFIG
    assert "'problem'" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, COARSE + "objectiv: {lam: 2}\n")
    assert run("solve", cfg, tmp_path / "o") == EXIT_CONFIG
    assert "objectiv" in capsys.readouterr().err


def test_gradcheck_passes_on_coarse_mesh(tmp_path):
    cfg = write(tmp_path, COARSE + "gradcheck: {directions: 3}\n")
    assert run("gradcheck", cfg, tmp_path / "o") == EXIT_OK
    rows = read_csv(tmp_path / "o" / "gradcheck_summary.csv")
    assert len(rows) == 3 and max(float(r["min_rel_error"]) for r in rows) <= 1e-6
    table = read_csv(tmp_path / "o" / "gradcheck.csv")
    assert len(table) == 15


def test_gradcheck_failure_exits_1(tmp_path):
    # an impossible threshold turns the check into a failure
    cfg = write(tmp_path, COARSE + "gradcheck: {directions: 1, threshold: 1e-300}\n")
    assert run("gradcheck", cfg, tmp_path / "o") == EXIT_NUMERICAL
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "error" and manifest["exit_code"] == 1


def test_estimate_without_sweep_is_actionable(tmp_path, capsys):
    cfg = write(tmp_path, "problem: toy2d\nestimator: {methods: [is]}\n")
    assert run("estimate", cfg, tmp_path / "o") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "sweep" in err


def test_eigs_without_sweep_and_with_unknown_lambda(tmp_path):
    cfg = write(tmp_path, "problem: toy2d\nobjective: {lam: 2.0, lam_grid: [1, 2]}\n")
    assert run("eigs", cfg, tmp_path / "o") == EXIT_CONFIG
    assert run("sweep", cfg, tmp_path / "o") == EXIT_OK
    other = write(tmp_path, "problem: toy2d\nobjective: {lam: 3.0, lam_grid: [1, 2]}\n", "b.yaml")
    assert run("eigs", other, tmp_path / "o") == EXIT_CONFIG


def test_toy_pipeline(tmp_path):
    out = tmp_path / "o"
    cfg = CONFIGS / "toy2d.yaml"
    assert run("sweep", cfg, out) == EXIT_OK
    sweep = read_csv(out / "sweep.csv")
    assert [float(r["lambda"]) for r in sweep] == [1.0, 2.0, 3.0, 4.0]
    z = [float(r["z"]) for r in sweep]
    assert np.all(np.diff(z) > 0)
    assert run("estimate", cfg, out) == EXIT_OK
    rows = read_csv(out / "estimate_all.csv")
    assert {r["method"] for r in rows} == {"mc", "is", "form", "sorm", "fit"}
    mc = {float(r["z"]): r for r in rows if r["method"] == "mc"}
    for r in rows:
        if r["method"] == "is" and float(r["p"]) > 0.02:
            m = mc[float(r["z"])]
            # the two 95% intervals overlap
            assert float(r["ci_low"]) <= float(m["ci_high"]) and float(m["ci_low"]) <= float(r["ci_high"])
    assert (out / "prefactor.csv").exists()
    assert (out / "manifest_sweep.json").exists() and (out / "manifest_estimate.json").exists()


def test_eigs_rank_is_clamped(tmp_path, caplog):
    out = tmp_path / "o"
    cfg = write(tmp_path, "problem: toy2d\nobjective: {lam: 2.0, lam_grid: [2]}\neigs: {rank: 5}\n")
    assert run("sweep", cfg, out) == EXIT_OK
    with caplog.at_level("WARNING"):
        assert run("eigs", cfg, out) == EXIT_OK
    assert "clamped" in caplog.text
    rows = read_csv(out / "spectrum_lam2.csv")
    assert len(rows) == 1
    assert float(rows[0]["lam_lambda_i"]) == pytest.approx(0.4, rel=1e-8)


def test_outputs_are_byte_identical_for_same_seed(tmp_path):
    cfg = CONFIGS / "toy2d.yaml"
    for d in ("a", "b"):
        assert run("sweep", cfg, tmp_path / d) == EXIT_OK
        assert run("estimate", cfg, tmp_path / d) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert files
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert run("estimate", cfg, tmp_path / "b", "--seed", "8") == EXIT_OK
    assert (tmp_path / "a" / "estimate_mc.csv").read_bytes() != (tmp_path / "b" / "estimate_mc.csv").read_bytes()


def test_manifest_reruns_the_command(tmp_path):
    cfg = CONFIGS / "linear.yaml"
    assert run("sweep", cfg, tmp_path / "a") == EXIT_OK
    manifest = tmp_path / "a" / "manifest_sweep.json"
    data = json.loads(manifest.read_text())
    assert data["command"] == "sweep" and data["seed"] == 11
    assert len(data["config_hash"]) == 64 and data["wall_time_s"] > 0
    assert data["versions"]["ldtprob"]
    assert "sweep.csv" in data["outputs"]
    shutil.copy(manifest, tmp_path / "m.json")
    assert run("sweep", tmp_path / "m.json", tmp_path / "b") == EXIT_OK
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    again = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert again["config_hash"] == data["config_hash"]


def test_mc_toy_budget(tmp_path):
    cfg = write(tmp_path, "problem: toy2d\nestimator: {methods: [mc], N: 1000, z_grid: [0.5, 1.0, 2.0]}\n")
    t0 = time.perf_counter()
    assert run("estimate", cfg, tmp_path / "o") == EXIT_OK
    assert time.perf_counter() - t0 < 60.0
    assert len(read_csv(tmp_path / "o" / "estimate_mc.csv")) == 3


def test_bad_workers_flag(tmp_path):
    cfg = write(tmp_path, "problem: toy2d\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "0"]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    cfg = write(tmp_path, "problem: linear\nobjective: {lam_grid: [1]}\n")
    proc = subprocess.run([sys.executable, "-m", "ldtprob.cli", "sweep", "--config", cfg, "--out",
                           str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "ldtprob.cli", "sweep", "--config", str(tmp_path / "nope.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_multistart_adds_the_mirror_optimizer(tmp_path):
    cfg = write(tmp_path, COARSE.replace("lam_grid: [12, 24]", "lam_grid: [48, 96], starts: 2")
                + "estimator: {methods: [form, sorm, is], N: 20}\n")
    out = tmp_path / "o"
    assert run("sweep", cfg, out) == EXIT_OK
    data = json.loads((out / "sweep.json").read_text())
    rows = read_csv(out / "sweep.csv")
    for rec, row in zip(data["records"], rows):
        (b,) = rec["branches"]
        assert b["z"] == pytest.approx(rec["z"], rel=1e-4)
        # the second optimizer lies on the other side of the mean
        assert np.dot(b["theta"], rec["theta"]) < 0
        assert rec["P_SO"] > b["P_SO"] > 0
        assert float(row["optimizers"]) == 2
        assert float(row["I_min"]) == pytest.approx(min(rec["I"], b["I"]))
    assert run("estimate", cfg, out) == EXIT_OK
    est = read_csv(out / "estimate_all.csv")
    sorm = [float(r["p"]) for r in est if r["method"] == "sorm"]
    np.testing.assert_allclose(sorm, [r["P_SO"] for r in data["records"]], rtol=1e-12)
    assert [r for r in est if r["method"] == "is"]
