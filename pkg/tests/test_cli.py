import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from shortfall_opt.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
BS = CONFIGS / "bs_power_exp.json"
EXAMPLE = CONFIGS / "bs_example.json"
TRI = CONFIGS / "trinomial.json"
TWO = CONFIGS / "two_state.json"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(tmp_path, base, **changes):
    d = json.loads(base.read_text())
    for k, v in changes.items():
        if v is None:
            d.pop(k, None)
        else:
            d[k] = v
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(d))
    return path


def frontier_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestSolve:
    def test_golden_bs(self, capsys):
        code, out, _ = run(capsys, "solve", "--config", BS)
        assert code == 0
        d = json.loads(out)
        expected = json.loads(BS.read_text())["expected"]
        assert d["feasibility"]["status"] == "binding"
        assert abs(d["residuals"]["budget"]) < 1e-9 and abs(d["residuals"]["risk"]) < 1e-9
        assert d["lambda_star"] == pytest.approx(expected["lambda_star"], rel=1e-8)
        assert d["y"] == pytest.approx(expected["y"], rel=1e-8)

    def test_discrete(self, capsys):
        code, out, _ = run(capsys, "solve", "--config", TRI)
        d = json.loads(out)
        assert code == 0 and d["binding"] is True
        assert d["u"] == pytest.approx(json.loads(TRI.read_text())["expected"]["u"], rel=1e-8)

    def test_global_flags_before_command(self, capsys, tmp_path):
        out = tmp_path / "sol.json"
        code, stdout, _ = run(capsys, "--config", EXAMPLE, "--out", out, "solve")
        assert code == 0 and stdout == ""
        assert json.loads(out.read_text())["lambda_star"] == 1.0

    def test_infeasible(self, capsys, tmp_path):
        code, _, err = run(capsys, "solve", "--config", write_config(tmp_path, BS, x1=0.1))
        assert code == 2
        assert "infeasible: x1 < r_min" in err

    def test_malformed_json(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(capsys, "solve", "--config", bad)[0] == 1

    @pytest.mark.parametrize(
        "changes",
        [
            {"colour": "blue"},
            {"preferences": {"utility": {"family": "log"}, "loss": {"family": "exponential", "gamma": 1.0}}},
            {"utility": {"family": "power", "p": 2.0}},
            {"x": -1.0},
            {"quadrature_order": 0},
            {"x1": "median"},
        ],
    )
    def test_schema_errors(self, capsys, tmp_path, changes):
        assert run(capsys, "solve", "--config", write_config(tmp_path, BS, **changes))[0] == 1

    def test_usage_errors(self, capsys):
        assert run(capsys, "solve")[0] == 1
        assert run(capsys)[0] == 1
        assert run(capsys, "solve", "--config", BS, "--bogus")[0] == 1
        assert run(capsys, "solve", "--config", BS, "--quad-order", "999")[0] == 1

    def test_quad_order_override(self, capsys):
        code, out, _ = run(capsys, "solve", "--config", BS, "--quad-order", "96")
        assert code == 0 and json.loads(out)["quadrature_order"] == 96


class TestFrontier:
    def test_single_row_at_r_max(self, capsys):
        code, out, _ = run(capsys, "frontier", "--config", BS, "--x1-grid", "r_max:r_max:1")
        rows = frontier_rows(out)
        assert code == 0 and len(rows) == 1
        assert float(rows[0]["lambda_star"]) == 0.0
        assert list(rows[0]) == ["x1", "u", "lambda_star", "y", "status"]

    def test_binding_grid_monotone(self, capsys):
        code, out, _ = run(capsys, "frontier", "--config", BS, "--x1-grid", "0.352:0.371:5")
        rows = frontier_rows(out)
        assert code == 0 and len(rows) == 5
        x1 = [float(r["x1"]) for r in rows]
        u = [float(r["u"]) for r in rows]
        assert x1 == sorted(x1)
        assert all(b >= a for a, b in zip(u, u[1:]))
        assert all(r["status"] == "binding" for r in rows)

    def test_straddling_r_min(self, capsys):
        code, out, _ = run(capsys, "frontier", "--config", TRI, "--x1-grid", "0.35:0.36:3")
        rows = frontier_rows(out)
        assert code == 0
        assert rows[0]["status"] == "failed" and rows[0]["u"] == ""
        assert all(r["status"] == "binding" for r in rows[1:])

    @pytest.mark.parametrize("grid", ["1:2", "0.5:0.4:3", "0.3:0.4:x", "a:b:3"])
    def test_bad_grid(self, capsys, grid):
        assert run(capsys, "frontier", "--config", BS, "--x1-grid", grid)[0] == 1


class TestSimulate:
    def test_csv(self, capsys):
        code, out, _ = run(capsys, "simulate", "--config", EXAMPLE, "--n-paths", 3, "--n-steps", 4)
        lines = out.splitlines()
        assert code == 0 and lines[0] == "path,step,t,B,S_1,N,X"
        assert len(lines) == 1 + 3 * 5

    def test_discrete_rejected(self, capsys):
        assert run(capsys, "simulate", "--config", TRI)[0] == 1

    def test_seed_changes_paths(self, capsys):
        a = run(capsys, "simulate", "--config", EXAMPLE, "--n-paths", 2, "--n-steps", 3)[1]
        b = run(capsys, "simulate", "--config", EXAMPLE, "--n-paths", 2, "--n-steps", 3, "--seed", 43)[1]
        assert a != b


class TestVerify:
    @pytest.mark.parametrize("cfg", [BS, EXAMPLE, TRI, TWO], ids=lambda p: p.stem)
    def test_shipped_configs_pass(self, capsys, cfg):
        code, out, _ = run(capsys, "verify", "--config", cfg)
        d = json.loads(out)
        assert code == 0 and d["passed"], out
        assert any(c["name"].startswith("golden_") for c in d["checks"])

    def test_tampered_golden(self, capsys, tmp_path):
        d = json.loads(TRI.read_text())
        d["expected"]["u"] += 1e-3
        path = tmp_path / "tampered.json"
        path.write_text(json.dumps(d))
        code, out, _ = run(capsys, "verify", "--config", path)
        assert code == 3
        failed = [c["name"] for c in json.loads(out)["checks"] if not c["passed"]]
        assert failed == ["golden_u"]

    def test_suite_mismatch(self, capsys):
        assert run(capsys, "verify", "--config", TRI, "--suite", "bs")[0] == 1
        assert run(capsys, "verify", "--config", BS, "--suite", "discrete")[0] == 1


class TestAECheck:
    def test_matrix(self, capsys):
        code, out, _ = run(capsys, "ae-check")
        rows = json.loads(out)
        assert code == 0 and len(rows) == 6
        assert all(r["report"]["verdict"] == "below_one" for r in rows)

    def test_single_config(self, capsys):
        code, out, _ = run(capsys, "ae-check", "--config", EXAMPLE)
        d = json.loads(out)
        assert code == 0 and d["report"]["case"] == "bounded_bounded"


class TestDeterminism:
    def test_solve_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["solve", "--config", str(BS), "--out", str(a)]) == 0
        assert main(["solve", "--config", str(BS), "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_simulate_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert main(["simulate", "--config", str(EXAMPLE), "--n-paths", "20", "--n-steps", "50", "--out", str(path)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_console_script(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "shortfall_opt.cli", "solve", "--config", str(TWO)],
            capture_output=True, text=True, check=False,
        )
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["binding"] is True
