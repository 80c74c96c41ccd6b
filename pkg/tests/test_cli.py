import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cgcp.analysis import CSV_COLUMNS, TIMING_COLUMNS
from cgcp.cli import main, parse_L_range
from cgcp.errors import ArgumentError
from cgcp.tensor3 import load_cpf


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    payload = json.loads(out) if out.strip().startswith("{") else None
    return code, payload, err


def csv_without_timing(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, c in enumerate(rows[0]) if c not in TIMING_COLUMNS]
    return [[r[i] for i in keep] for r in rows]


class TestRangeParsing:
    @pytest.mark.parametrize("text,expected", [("3", [3]), ("1..4", [1, 2, 3, 4]), ("1,3", [1, 3]), ([2, 5], [2, 5])])
    def test_forms(self, text, expected):
        assert parse_L_range(text) == expected

    @pytest.mark.parametrize("text", ["3..1", "", "a..b", "-1"])
    def test_bad(self, text):
        with pytest.raises(ArgumentError):
            parse_L_range(text)


class TestFit:
    def test_exact_fit(self, capsys, tmp_path):
        code, out, _ = run(capsys, "fit", "--L", 1, "--R", 16, "--seed", 7, "--out", tmp_path)
        assert code == 0
        assert out["fit"] < 1e-6 and out["restarts"] == 8 and out["wall_time_s"] >= 0
        assert out["config"]["seed"] == 7 and out["config"]["command"] == "fit"
        f = load_cpf(tmp_path / out["factors"])
        assert f.rank == 16 and f.fit == out["fit"]
        assert (tmp_path / "fit_L1_R16.json").exists()

    def test_scalar(self, capsys, tmp_path):
        code, out, _ = run(capsys, "fit", "--L", 0, "--R", 1, "--out", tmp_path)
        assert code == 0 and out["fit"] == 0.0

    def test_rank_above_bound(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", "--L", 1, "--R", 999, "--out", tmp_path)
        assert code == 2 and "generic rank bound" in err

    def test_missing_flag(self, capsys, tmp_path):
        assert main(["fit", "--L", "1", "--out", str(tmp_path)]) == 2

    def test_L_out_of_range(self, capsys, tmp_path):
        code, _, err = run(capsys, "fit", "--L", 9, "--R", 1, "--out", tmp_path)
        assert code == 2 and "L must be" in err


class TestVerify:
    def test_default_passes(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", "--out", tmp_path)
        assert code == 0 and out["passed"]
        assert {c["name"] for c in out["checks"]} == {
            "cg_orthogonality", "wigner_orthogonality", "wigner_homomorphism",
            "exact_equivariance", "proof_step_bound", "universality"}
        assert out["config"]["L"] == 3

    def test_corrupt_cg_detected(self, capsys, tmp_path):
        code, out, err = run(capsys, "verify", "--corrupt-cg", "--out", tmp_path)
        assert code == 1
        assert "exact_equivariance" in out["failed"]
        assert "exact_equivariance" in err

    def test_single_check(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", "--check", "universality", "--L", 2, "--out", tmp_path)
        assert code == 0
        assert [c["name"] for c in out["checks"]] == ["universality"]
        assert out["checks"][0]["max_residual"] < 1e-10

    def test_unknown_check(self, capsys, tmp_path):
        assert main(["verify", "--check", "nope", "--out", str(tmp_path)]) == 2


SWEEP_FAST = ["--samples", 100, "--rotations", 50, "--restarts", 2, "--max-iters", 200, "--timing-reps", 3]


class TestSweep:
    def test_rows_and_ordering(self, capsys, tmp_path):
        code, out, _ = run(capsys, "sweep", "--L", "1..4", "--schedules", "quadratic7,linear7",
                           "--out", tmp_path, *SWEEP_FAST)
        assert code == 0
        rows = out["rows"]
        assert len(rows) == 8
        with open(tmp_path / "sweep.csv") as fh:
            table = list(csv.DictReader(fh))
        assert list(table[0]) == CSV_COLUMNS and len(table) == 8
        for L in range(1, 5):
            q, lin = (r for r in rows if r["L"] == L)
            assert q["approx_error"] <= lin["approx_error"]
            assert q["bound_violations"] == 0 and lin["bound_violations"] == 0

    def test_empty_range(self, capsys, tmp_path):
        code, _, err = run(capsys, "sweep", "--L", "4..1", "--out", tmp_path)
        assert code == 2 and "empty" in err

    def test_bad_schedule(self, capsys, tmp_path):
        code, _, _ = run(capsys, "sweep", "--L", "1", "--schedules", "cubic", "--out", tmp_path)
        assert code == 2

    def test_rerun_and_config_replay(self, capsys, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        args = ["sweep", "--L", "1..2", "--schedules", "log2,linear7", *SWEEP_FAST]
        _, out, _ = run(capsys, *args, "--out", a)
        run(capsys, *args, "--out", b)
        assert csv_without_timing(a / "sweep.csv") == csv_without_timing(b / "sweep.csv")
        cfg = dict(out["config"], out=str(c))
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        code, replay, _ = run(capsys, "sweep", "--config", tmp_path / "cfg.json")
        assert code == 0 and replay["config"] == cfg
        assert csv_without_timing(a / "sweep.csv") == csv_without_timing(c / "sweep.csv")

    def test_config_unknown_key(self, capsys, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"bogus": 1}))
        assert main(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path)]) == 2

    def test_config_wrong_command(self, capsys, tmp_path):
        (tmp_path / "cfg.json").write_text(json.dumps({"command": "bench"}))
        assert main(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path)]) == 2

    def test_all_rows_failed(self, capsys, tmp_path):
        code, _, err = run(capsys, "sweep", "--L", "9", "--schedules", "linear7", "--out", tmp_path)
        assert code == 3 and "failed" in err


class TestBenchAndExport:
    def test_bench_single_row(self, capsys, tmp_path):
        code, out, _ = run(capsys, "bench", "--L", "1..1", "--reps", 3, "--out", tmp_path)
        assert code == 0 and len(out["rows"]) == 1
        with open(tmp_path / "bench.csv") as fh:
            assert len(list(csv.reader(fh))) == 2

    def test_bench_float32(self, capsys, tmp_path):
        code, out, _ = run(capsys, "bench", "--L", "1", "--reps", 3, "--float", 32, "--out", tmp_path)
        assert code == 0 and out["config"]["float_width"] == 32

    def test_bench_reps_too_small(self, capsys, tmp_path):
        assert run(capsys, "bench", "--L", "1", "--reps", 2, "--out", tmp_path)[0] == 2

    def test_export(self, capsys, tmp_path):
        code, out, _ = run(capsys, "export-cg", "--L", 1, "--out", tmp_path)
        assert code == 0 and out["nnz"] == 16
        lines = (tmp_path / "cg_L1.txt").read_text().splitlines()
        assert lines[0] == "1 4 16" and len(lines) == 17
        k, i, j, v = lines[1].split()
        assert (k, i, j) == ("0", "0", "0") and float(v) == 1.0

    def test_writes_only_into_out(self, capsys, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        out = tmp_path / "dest"
        run(capsys, "export-cg", "--L", 1, "--out", out)
        run(capsys, "fit", "--L", 0, "--R", 1, "--out", out)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["dest"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cgcp", "export-cg", "--L", "0", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["nnz"] == 1
    assert np.isclose(float((tmp_path / "cg_L0.txt").read_text().split()[-1]), 1.0)
