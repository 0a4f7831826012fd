import json

import numpy as np
import pytest

from levylab.cli import main
from levylab.ensemble import read_matrix


def test_stable_sample(tmp_path):
    assert main(["--out-dir", str(tmp_path), "stable", "sample", "--alpha", "1.5", "-n", "100", "--out", "x.txt"]) == 0
    x = np.loadtxt(tmp_path / "x.txt")
    assert x.shape == (100,)
    main(["stable", "sample", "--alpha", "1.5", "-n", "100", "--out", str(tmp_path / "y.txt"), "--seed", "0"])
    assert np.array_equal(x, np.loadtxt(tmp_path / "y.txt"))


def test_ppp(tmp_path):
    assert main(["stable", "ppp", "--alpha", "1", "--cutoff", "0.01", "--out", str(tmp_path / "p.txt")]) == 0
    pts = np.atleast_1d(np.loadtxt(tmp_path / "p.txt"))
    assert np.all(pts >= 0.01)


def test_matrix_roundtrip_and_perturb(tmp_path, capsys):
    m = tmp_path / "h.levm"
    assert main(["matrix", "build", "--alpha", "1.2", "--n", "20", "--out", str(m)]) == 0
    H = read_matrix(m)
    assert H.shape == (20, 20) and np.array_equal(H, H.T)
    assert main(["matrix", "perturb", "--in", str(m), "--s", "0", "--out", str(tmp_path / "p.levm")]) == 0
    assert np.array_equal(read_matrix(tmp_path / "p.levm"), H)
    assert main(["matrix", "decompose", "--alpha", "1.2", "--n", "20", "--out", str(tmp_path / "d")]) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["N"] == 20
    A, B, C = (read_matrix(tmp_path / f"d.{k}.levm") for k in "ABC")
    assert np.array_equal(A + B + C, H)


def test_rde_mstar(capsys):
    assert main(["rde", "mstar", "--alpha", "1", "--im", "1e-9"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["im"] == pytest.approx(1.0, rel=1e-6)


def test_rde_density(capsys):
    assert main(["rde", "density", "--alpha", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["density"] == pytest.approx(out["closed_form"]["inverted"], rel=1e-6)


def test_rde_solve(tmp_path, capsys):
    out = tmp_path / "pop.csv"
    assert main(["rde", "solve", "--alpha", "1", "--im", "0.1", "--pool", "10000", "--gens", "5", "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (10000, 2) and np.all(data[:, 1] > 0)


def test_moments_limit(tmp_path):
    out = tmp_path / "m.json"
    assert main(["moments", "limit", "--alpha", "1", "--pmax", "2", "--pool", "0", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["schema"] == 1
    assert {r["label"]: r["theory"] for r in d["rows"]}["median_p2"] == pytest.approx(9.0)


def test_matrix_time(capsys):
    assert main(["matrix", "time", "--alpha", "1.5", "--n", "1000", "--samples", "200000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["lower"] <= out["t"] <= out["upper"]


def test_verify_que_and_bad_config(tmp_path, capsys):
    cfg = tmp_path / "q.ini"
    cfg.write_text("[experiment]\nname = que\nalpha = 1.5\nn = 40\nreplicas = 100\nseed = 1\nque_sizes = 4, 8\n")
    code = main(["verify", "que", "--config", str(cfg), "--out-dir", str(tmp_path / "o")])
    assert code in (0, 1)
    assert (tmp_path / "o" / "que.json").exists()
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nname = que\nalpha = 1.5\nreplicas = 100\nseed = 1\n")
    assert main(["run", str(bad)]) == 2
    assert "'n'" in capsys.readouterr().err
    assert main(["verify", "median", "--config", str(cfg)]) == 2


def test_emf_run(tmp_path):
    out = tmp_path / "e.json"
    code = main(["emf", "run", "--alpha", "1.5", "--n", "60", "--replicas", "100", "--xi", "N/2:1", "--out", str(out)])
    assert code in (0, 1)
    d = json.loads(out.read_text())
    assert d["context"]["xi"] == "30:1"
