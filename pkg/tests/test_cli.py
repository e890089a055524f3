import json
import subprocess
import sys

import numpy as np
import pytest

from pdmplab.cli import main
from pdmplab.gridfield import GridField

P = ["--alpha", "2", "--beta", "1", "--lambda0", "3", "--lambda1", "2"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestValidation:
    def test_missing_alpha_prints_usage(self, capsys):
        code, _, err = run(["classify", "--beta", "1", "--lambda0", "1", "--lambda1", "1"], capsys)
        assert code == 2
        assert "usage:" in err and "alpha" in err

    def test_alpha_not_above_beta(self, capsys):
        code, _, err = run(["classify", "--alpha", "1", "--beta", "2", "--lambda0", "1",
                            "--lambda1", "1"], capsys)
        assert code == 2 and "usage:" in err

    @pytest.mark.parametrize("extra", [["--events", "0"], ["--burn-in", "-1"], ["--regime", "2"], ["--x1", "1.5"]])
    def test_simulate_bad_inputs(self, extra, capsys, tmp_path):
        code, _, _ = run(["simulate", *P, "--out", str(tmp_path), *extra], capsys)
        assert code == 2

    def test_bad_threads(self, capsys, monkeypatch):
        monkeypatch.setenv("PDMPLAB_THREADS", "many")
        assert run(["classify", *P], capsys)[0] == 2

    def test_run_config_precedence(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"alpha": 2, "beta": 1, "lambda0": 1, "lambda1": 2}))
        code, out, _ = run(["classify", "--run-config", str(cfg), "--lambda0", "3"], capsys)
        assert code == 0
        assert json.loads(out)["params"]["lambda0"] == 3.0
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(["classify", *P, "--run-config", str(cfg)], capsys)[0] == 2


class TestSimulate:
    def test_outputs_and_determinism(self, capsys, tmp_path):
        args = ["simulate", *P, "--events", "20000", "--seed", "5", "--grid", "32"]
        args += ["--out", str(tmp_path / "a")]
        assert run(args, capsys)[0] == 0
        first = {n: (tmp_path / "a" / n).read_bytes() for n in ("events.csv", "occupation.csv")}
        code, out, _ = run(args, capsys)
        assert code == 0
        summary = json.loads(out)
        assert summary["expected"] == pytest.approx(0.4)
        assert summary["regime0_fraction"] == pytest.approx(0.4, abs=0.03)
        for name in ("events.csv", "occupation.csv"):
            assert (tmp_path / "a" / name).read_bytes() == first[name]
        occ = GridField.from_csv(tmp_path / "a" / "occupation.csv")
        assert occ.shape == (32, 32)
        head = (tmp_path / "a" / "events.csv").read_text().splitlines()
        assert head[0].startswith("#")


class TestSolve:
    def test_cdf(self, capsys, tmp_path):
        out = tmp_path / "sol.csv"
        code, text, _ = run(["solve", *P, "--grid", "32", "--out", str(out)], capsys)
        assert code == 0
        assert text.splitlines()[0].startswith("iteration 1 residual")
        fld = GridField.from_csv(out)
        assert fld.kind == "cdf" and fld.is_monotone()
        assert fld.values0[-1, -1] == pytest.approx(0.4)

    def test_q2_agrees_with_cdf(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run(["solve", *P, "--grid", "32", "--out", str(a)], capsys)[0] == 0
        assert run(["solve", *P, "--grid", "32", "--method", "q2", "--out", str(b)], capsys)[0] == 0
        da = GridField.from_csv(a).to_density()
        db = GridField.from_csv(b)
        assert db.kind == "density"
        assert np.abs(da.values0 - db.values0).sum() / 32 ** 2 < 0.05

    def test_nonconvergence(self, capsys, tmp_path):
        code, _, err = run(["solve", *P, "--grid", "16", "--max-iter", "2",
                            "--out", str(tmp_path / "x.csv")], capsys)
        assert code == 3
        assert "iteration 2 residual" in err
        assert not (tmp_path / "x.csv").exists()

    def test_solver_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "s.json"
        cfg.write_text(json.dumps({"grid": 16, "tol": 1e-5}))
        out = tmp_path / "s.csv"
        assert run(["solve", *P, "--solver-config", str(cfg), "--out", str(out)], capsys)[0] == 0
        assert GridField.from_csv(out).shape == (16, 16)
        cfg.write_text("{\"grid\": 0}")
        assert run(["solve", *P, "--solver-config", str(cfg), "--out", str(out)], capsys)[0] == 2


class TestClassify:
    def test_report(self, capsys):
        code, out, _ = run(["classify", *P], capsys)
        doc = json.loads(out)
        assert code == 0
        assert doc["origin_singular"] == "open"
        assert doc["critical_flags"] == ["lambda0 == alpha + beta"]
        assert doc["left_boundary_singular"] is False
        assert "rho1" in doc


class TestDiagnose:
    def test_corner(self, capsys):
        code, out, _ = run(["diagnose", "corner", "--alpha", "2", "--beta", "1", "--lambda0", "1",
                            "--lambda1", "2", "--events", "300000", "--eps-grid",
                            "0.3,0.15,0.075,0.0375,0.01875"], capsys)
        assert code == 0
        assert "within tolerance" in out.splitlines()[-1]

    def test_marginals_from_log(self, capsys, tmp_path):
        assert run(["simulate", *P, "--events", "200000", "--grid", "16",
                    "--out", str(tmp_path)], capsys)[0] == 0
        code, out, _ = run(["diagnose", "marginals", *P, "--log", str(tmp_path / "events.csv")], capsys)
        assert code == 0
        doc = json.loads(out.splitlines()[0])
        assert max(doc["ks"].values()) < 0.02

    def test_contraction(self, capsys):
        code, out, _ = run(["diagnose", "contraction", *P, "--events", "2000", "--pairs", "3"], capsys)
        assert code == 0 and "holds" in out

    def test_insufficient_data(self, capsys):
        code, _, err = run(["diagnose", "corner", *P, "--events", "50", "--burn-in", "0"], capsys)
        assert code == 4 and "insufficient" in err


class TestReduce:
    def test_pde_modes_verify(self, capsys):
        code, out, _ = run(["reduce", "--preset", "pde-modes", "--k", "2", "--m", "1",
                            "--lambda0", "1", "--lambda1", "1", "--verify"], capsys)
        doc = json.loads(out)
        assert code == 0 and doc["verify_passed"]
        assert doc["conjugacy"]["params"]["alpha"] == pytest.approx(4 * np.pi ** 2)

    def test_unsupported(self, capsys):
        code, _, err = run(["reduce", "--preset", "gene-expression", "--alpha-prod", "1", "--delta",
                            "1", "--beta-prod", "1", "--gamma", "1", "--lambda0", "1",
                            "--lambda1", "1"], capsys)
        assert code == 5 and "unsupported" in err

    def test_needs_one_source(self, capsys):
        assert run(["reduce"], capsys)[0] == 2

    def test_chain(self, capsys):
        code, out, _ = run(["reduce", "--preset", "pde-modes", "--k", "2", "--m", "1",
                            "--lambda0", "100", "--lambda1", "1", "--chain", "classify"], capsys)
        assert code == 0
        assert '"critical_flags"' in out


def test_entry_point():
    res = subprocess.run([sys.executable, "-m", "pdmplab.cli", "classify", *P],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["params"]["alpha"] == 2.0
