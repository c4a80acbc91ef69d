import csv
import json
import subprocess
import sys

import pytest

from fdrsafe.cli import main, read_statistics
from fdrsafe.simulation import ScenarioSpec, gen_symmetric

SMALL_GRID = {"L_nulltype": ["mle"], "L_marginal": ["spline"], "L_pct0": [0.225],
              "L_pct": [0.0], "Q_adj": [1.5], "G_pct0": [0.55]}


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(SMALL_GRID))
    return str(path)


@pytest.fixture
def stats_csv(tmp_path):
    d = gen_symmetric(ScenarioSpec("symmetric", I=400), 8)
    path = tmp_path / "stats.csv"
    with open(path, "w") as fh:
        fh.write("gene,statistic\n")
        for i, v in enumerate(d.u):
            fh.write(f"g{i},{float(v)!r}\n")
    return str(path)


def run_args(stats_csv, out, grid_file, *extra):
    return ["run", stats_csv, "--out", str(out), "--grid", grid_file, "--n-synthetic", "2",
            "--ensemble-size", "3", *extra]


class TestRun:
    def test_result_schema(self, stats_csv, grid_file, tmp_path):
        out = tmp_path / "r.json"
        assert main(run_args(stats_csv, out, grid_file, "--seed", "5")) == 0
        res = json.loads(out.read_text())
        assert res["schema_version"] == 1
        assert 0 <= res["pi0_hat"] <= 1
        assert len(res["hypotheses"]) == 400
        h = res["hypotheses"][7]
        assert h["index"] == 7 and h["columns"] == {"gene": "g7"}
        assert {"fdr_hat", "Fdr_hat", "u"} <= set(h)
        assert len(res["selected"]) == 3
        assert abs(sum(s["weight"] for s in res["selected"]) - 1) < 1e-12
        assert all(s["L_hat"] is not None for s in res["selected"])
        man = res["manifest"]
        assert man["seed"] == 5 and len(man["input"]["sha256"]) == 64
        side = json.loads((tmp_path / "r.json.manifest.json").read_text())
        assert set(side["timings"]) >= {"generator", "scoring", "total"}

    def test_byte_identical(self, stats_csv, grid_file, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(run_args(stats_csv, a, grid_file, "--seed", "3")) == 0
        assert main(run_args(stats_csv, b, grid_file, "--seed", "3", "--workers", "2")) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_from_environment(self, stats_csv, grid_file, tmp_path, monkeypatch):
        monkeypatch.setenv("FDRSAFE_SEED", "17")
        out = tmp_path / "e.json"
        assert main(run_args(stats_csv, out, grid_file)) == 0
        assert json.loads(out.read_text())["manifest"]["seed"] == 17
        monkeypatch.setenv("FDRSAFE_SEED", "x")
        assert main(run_args(stats_csv, out, grid_file)) == 2

    def test_t_null_and_ablation(self, stats_csv, grid_file, tmp_path):
        out = tmp_path / "t.json"
        assert main(run_args(stats_csv, out, grid_file, "--df", "18",
                             "--method", "aggregation_all")) == 0
        res = json.loads(out.read_text())
        assert res["manifest"]["config"]["null_spec"] == {"kind": "t", "df": 18.0}
        assert res["method"] == "fdrSAFE_aggregation-all"

    def test_empty_csv(self, tmp_path, capsys):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert main(["run", str(path)]) == 2
        path.write_text("statistic\n")
        assert main(["run", str(path)]) == 2

    def test_malformed_line_reported(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("statistic\n1.5\n-0.2\nfoo\n")
        assert main(["run", str(path)]) == 2
        assert ":4:" in capsys.readouterr().err
        path.write_text("value\n1.0\n")
        assert main(["run", str(path)]) == 2
        path.write_text("statistic\n1.0\ninf\n")
        assert main(["run", str(path)]) == 2

    def test_pipeline_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "zeros.csv"
        path.write_text("statistic\n" + "0\n" * 100)
        assert main(["run", str(path)]) == 3
        assert "generator" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.csv")]) == 2

    def test_reader_keeps_digest(self, stats_csv):
        u, extra, header, digest = read_statistics(stats_csv)
        assert header == ["gene", "statistic"] and u.size == 400
        assert digest == read_statistics(stats_csv)[3]


class TestGrid:
    def test_default_listing(self, capsys):
        assert main(["grid"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[-1] == "total: 110 models"
        assert len(lines) == 111

    def test_json_single_family(self, tmp_path, capsys):
        path = tmp_path / "g.json"
        path.write_text('{"include_L": false, "include_G": false}')
        assert main(["grid", "--grid", str(path), "--format", "json"]) == 0
        listing = json.loads(capsys.readouterr().out)
        assert listing["count"] == 24
        assert {m["family"] for m in listing["models"]} == {"PValueSmoother"}

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "g.json"
        path.write_text('{"L_pct0": "oops", "nonsense": 3}')
        assert main(["grid", "--grid", str(path)]) == 2


class TestSimulate:
    def test_outputs_and_determinism(self, tmp_path, grid_file):
        args = ["simulate", "--scenario", "symmetric", "--reps", "2", "--I", "300",
                "--methods", "fdrSAFE,fdrSAFE_aggregation-all", "--seed", "4",
                "--n-synthetic", "2", "--ensemble-size", "3", "--grid", grid_file]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main([*args, "--out-dir", str(a)]) == 0
        assert main([*args, "--out-dir", str(b)]) == 0
        for name in ("metrics.csv", "summary.csv", "shares.csv",
                     "calibration_local_fdrSAFE.csv", "calibration_global_fdrSAFE.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        with open(a / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["fdrSAFE", "fdrSAFE_aggregation-all"]
        assert set(rows[0]) == {"method", "fdr_rmse", "Fdr_rmse", "brier", "pr_auc",
                                "roc_auc", "pi0_hat"}
        with open(a / "metrics.csv") as fh:
            long = list(csv.DictReader(fh))
        assert len(long) == 2 * 2 * 6
        assert json.loads((a / "manifest.json").read_text())["reps"] == 2

    def test_unknown_scenario(self, tmp_path):
        assert main(["simulate", "--scenario", "spiral", "--out-dir", str(tmp_path)]) == 2
        assert main(["simulate", "--scenario", "symmetric", "--methods", "magic",
                     "--out-dir", str(tmp_path)]) == 2


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fdrsafe.cli", "grid", "--format", "json"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["count"] == 110
