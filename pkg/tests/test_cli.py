import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from rnamg.cli import (SOLVE_COLUMNS, ConfigError, _parse_value, load_config, main)
from rnamg.complexity import TABLE1_COLUMNS, TABLE2_COLUMNS
from rnamg.io import read_matrix


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestSolve:
    def test_converged_exit_zero(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--kind", "poisson2d", "--n", "16")
        assert code == 0
        rows = parse_csv(out)
        assert len(rows) == 1 and tuple(rows[0]) == SOLVE_COLUMNS
        assert rows[0]["converged"] == "True"
        assert 1 <= float(rows[0]["OC"]) < 2

    def test_not_converged_exit_two(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--kind", "poisson2d", "--n", "16",
                               "--max-iters", "1")
        assert code == 2
        assert parse_csv(out)[0]["converged"] == "False"

    def test_diverged_exit_two(self, capsys):
        code, _, _ = run_cli(capsys, "solve", "--kind", "poisson2d", "--n", "16", "--accel", "none",
                             "--relax", "jacobi", "--relax-weight", "3.0", "--max-iters", "200")
        assert code == 2

    def test_identical_bytes(self, tmp_path, capsys):
        args = ["solve", "--kind", "rotated_aniso2d", "--n", "20", "--psi", "3pi/16"]
        for name in ("a.csv", "b.csv"):
            assert run_cli(capsys, *args, "--out", str(tmp_path / name))[0] == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_json_output(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--kind", "poisson1d", "--n", "40", "--format", "json")
        assert code == 0
        rows = json.loads(out)
        assert rows[0]["converged"] is True and set(rows[0]) == set(SOLVE_COLUMNS)

    def test_nonsymmetric_switches_to_gmres(self, capsys):
        code, out, _ = run_cli(capsys, "solve", "--kind", "upwind_transport", "--n", "16",
                               "--relax", "gsne", "--max-iters", "150")
        assert code == 0

    def test_matrix_file_input(self, tmp_path, capsys):
        stem = str(tmp_path / "p")
        assert run_cli(capsys, "generate", stem, "--kind", "poisson2d", "--n", "12")[0] == 0
        code, out, _ = run_cli(capsys, "solve", "--matrix", stem + ".mtx")
        assert code == 0 and parse_csv(out)[0]["converged"] == "True"

    def test_installed_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "rnamg.cli", "solve", "--kind", "poisson1d",
                               "--n", "30"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.startswith("SC,OC,CC,rho")


class TestConfig:
    def test_file_and_flag_precedence(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"problem": {"kind": "poisson1d", "n": 30},
                                      "setup": {"interp": {"degree": 2}}})
        code, out, _ = run_cli(capsys, "setup", "--config", cfg, "--n", "20")
        assert code == 0
        summary = json.loads(out)
        assert summary["levels"][0]["n"] == 20
        assert load_config(cfg, {}).setup.interp.degree == 2

    def test_missing_file(self, capsys):
        code, _, err = run_cli(capsys, "solve", "--config", "/nonexistent/cfg.json")
        assert code == 1 and "cannot read config" in err

    @pytest.mark.parametrize("doc", [{"problem": {"colour": 1}}, {"solve": {"tol": -1}},
                                     {"solve": {"accel": "bicg"}}, {"problem": {"kind": "cube"}},
                                     {"output": {"format": "xml"}}, {"solve": {"kind": "F"}},
                                     {"setup": {"strength": {"measure": "magic"}}}, [1, 2]])
    def test_bad_config_exit_one(self, tmp_path, capsys, doc):
        code, _, err = run_cli(capsys, "solve", "--config", write_config(tmp_path, doc))
        assert code == 1 and err.startswith("amg: error:")

    def test_malformed_json(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run_cli(capsys, "solve", "--config", str(path))[0] == 1

    def test_bad_flag_value(self, capsys):
        assert run_cli(capsys, "solve", "--n", "ten")[0] == 1
        assert run_cli(capsys, "solve", "--vector", "maybe")[0] == 1

    def test_parse_values(self):
        assert _parse_value("3pi/16", float) == pytest.approx(3 * math.pi / 16)
        assert _parse_value("none", str) == "none"
        assert _parse_value("null", str) is None
        assert _parse_value("none", float) is None
        assert _parse_value("1,2", "pair") == [1, 2]
        assert _parse_value("0,pi/4,0.5", "list") == [0, pytest.approx(math.pi / 4), 0.5]
        assert _parse_value("yes", bool) is True
        with pytest.raises(ConfigError):
            _parse_value("1,2,3", "pair")


class TestSweep:
    def test_default_angle_sweep(self, capsys):
        code, out, _ = run_cli(capsys, "sweep", "--kind", "rotated_aniso2d", "--n", "16")
        rows = parse_csv(out)
        assert code == 0 and len(rows) == 9
        psi = [float(r["psi"]) for r in rows]
        assert np.allclose(psi, [k * math.pi / 16 for k in range(9)])

    def test_parallel_matches_serial(self, tmp_path, capsys):
        args = ["sweep", "--kind", "poisson2d", "--param", "n", "--values", "8,12,16"]
        run_cli(capsys, *args, "--out", str(tmp_path / "s.csv"))
        run_cli(capsys, *args, "--jobs", "2", "--out", str(tmp_path / "p.csv"))
        assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()
        assert [r["n"] for r in parse_csv((tmp_path / "s.csv").read_text())] == ["8", "12", "16"]

    def test_sweep_needs_parameter(self, capsys):
        assert run_cli(capsys, "sweep", "--kind", "poisson2d")[0] == 1
        assert run_cli(capsys, "sweep", "--kind", "poisson2d", "--param", "bogus.key",
                       "--values", "1")[0] == 1


class TestReportVerifyGenerate:
    def test_table_layouts(self, capsys):
        base = ["report", "--kind", "aniso3d", "--n", "6"]
        code, out, _ = run_cli(capsys, *base)
        rows = parse_csv(out)
        assert code == 0 and len(rows) == 7 and tuple(rows[0]) == TABLE1_COLUMNS
        assert (rows[0]["prefilter"], rows[0]["postfilter"]) == ("--", "--")
        code, out, _ = run_cli(capsys, *base, "--table", "2")
        rows = parse_csv(out)
        assert len(rows) == 4 and tuple(rows[0]) == TABLE2_COLUMNS
        for r in rows:
            parts = sum(float(r[k]) for k in ("Aggregation", "Candidates", "P", "RAP"))
            assert parts == pytest.approx(float(r["Total SC"]), rel=1e-6)

    def test_verify_quick(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "verify", "--quick")
        assert code == 0 and json.loads(out)["passed"] is True
        out_path = tmp_path / "v.json"
        assert run_cli(capsys, "verify", "--quick", "--out", str(out_path))[0] == 0
        assert json.loads(out_path.read_text())["passed"] is True

    def test_generate(self, tmp_path, capsys):
        stem = str(tmp_path / "beam")
        code, out, _ = run_cli(capsys, "generate", stem, "--kind", "elasticity2d", "--n", "2")
        assert code == 0 and out.split() == [stem + ".mtx", stem + ".json"]
        meta = json.loads((tmp_path / "beam.json").read_text())
        assert meta["block_size"] == 2
        assert read_matrix(stem + ".mtx").n_rows == meta["n"]
