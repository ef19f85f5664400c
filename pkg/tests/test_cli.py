import json

import numpy as np
import pytest

from nekhlab.cli import dispatch


def _run(capsys, *argv):
    code = dispatch(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_verify_ok(tmp_path, capsys):
    code, out, _ = _run(capsys, "verify", "--out-dir", str(tmp_path))
    assert code == 0 and json.loads(out)["all_pass"]
    man = json.loads((tmp_path / "manifest-verify.json").read_text())
    assert man["command"] == "verify" and "verify.json" in " ".join(man["outputs"])


def test_validation_exit(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[symbols]\ndelta = 0.5\n")
    code, _, err = _run(capsys, "verify", "--config", str(cfg), "--out-dir", str(tmp_path))
    assert code == 1
    doc = json.loads(err.strip().splitlines()[-1])
    assert "δ must exceed 2/3" in doc["message"] and doc["key"] == "delta"
    assert _run(capsys, "simulate", "--out-dir", str(tmp_path), "--t-end", "1")[0] == 1  # no a0
    assert _run(capsys, "classify", "1,2,3", "--out-dir", str(tmp_path))[0] == 1
    assert _run(capsys, "nonsense")[0] == 1


def test_numerical_exit(tmp_path, capsys):
    code, _, err = _run(capsys, "simulate", "--a0", "1e6,0", "--t-end", "10", "--dt", "1",
                        "--maxit", "2", "--max-halvings", "0", "--out-dir", str(tmp_path))
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "numerical"


def test_simulate_deterministic_and_growth(tmp_path, capsys):
    outs = []
    for sub in ("r1", "r2"):
        d = tmp_path / sub
        code, _, _ = _run(capsys, "simulate", "--a0", "20,3", "--t-end", "2000", "--dt", "0.05",
                          "--samples", "1500", "--spacing", "uniform", "--out-dir", str(d))
        assert code == 0
        outs.append(d)
    assert (outs[0] / "trajectory.csv").read_bytes() == (outs[1] / "trajectory.csv").read_bytes()
    m1, m2 = (json.loads((o / "manifest-simulate.json").read_text()) for o in outs)
    assert m1["params_sha256"] == m2["params_sha256"]
    assert sorted(m1["outputs"].values()) == sorted(m2["outputs"].values())
    code, out, _ = _run(capsys, "growth", str(outs[0] / "trajectory.csv"), "--out-dir", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["passes"] and rep["eps_hat"] < 0.05
    rows = (tmp_path / "growth_plot.csv").read_text().splitlines()
    assert rows[0] == "t,sup,envelope" and len(rows) == 1501


def test_classify_output(tmp_path, capsys):
    code, out, _ = _run(capsys, "classify", "1e9,0", "--out-dir", str(tmp_path))
    assert code == 0
    lab = json.loads(out)
    assert lab["point"] == [1e9, 0.0] and lab["s"] in (0, 1, 2)


def test_zonemap_small(tmp_path, capsys):
    code, out, _ = _run(capsys, "zonemap", "--res", "12,8", "--no-png", "--threads", "1",
                        "--out-dir", str(tmp_path))
    assert code == 0
    assert sum(json.loads(out)["counts"].values()) == 96
    pgm = (tmp_path / "zonemap.pgm").read_bytes()
    assert pgm.startswith(b"P5\n12 8\n255\n") and len(pgm) == len(b"P5\n12 8\n255\n") + 96
    assert len((tmp_path / "zonemap.csv").read_text().splitlines()) == 97


@pytest.mark.slow
def test_normalform_quick(tmp_path, capsys):
    code, out, _ = _run(capsys, "normalform", "--max-steps", "1", "--n-radii", "4",
                        "--out-dir", str(tmp_path))
    assert code == 0 and out.strip()
    doc = json.loads((tmp_path / "normalform.json").read_text())
    assert doc["steps"] >= 1
    assert (tmp_path / "ledger.txt").read_text().strip() == out.strip()
