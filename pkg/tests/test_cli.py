import csv
import io
import json
import subprocess
import sys

import jsonschema
import pytest

from fracheat.cli import REPORT_SCHEMA, Bundle, emit_plotdata, main, run_experiment
from fracheat.config import parse_config

SMALL_GRID = "[grid]\npoints = 32\n[scan]\nt_min = 0.001\nt_max = 1\nt_count = 4\nt_list = 0.1, 1\n"
FREE = ("[grid]\ndomain = free\n[scan]\nt_min = 0.01\nt_max = 10\nt_count = 4\n"
        "r_max = 10\nr_count = 20\nr_min = 0.01\nt_list = 0.1, 1, 10\n")


def run(tmp_path, kind, text="", name="out"):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(text, encoding="utf-8")
    out = tmp_path / name
    code = main([kind, "--config", str(cfg), "--out", str(out)])
    report = json.loads((out / "report.json").read_text(encoding="utf-8")) if out.exists() else None
    return code, out, report


def read_csv(path):
    return list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))


def test_density_rows(tmp_path):
    code, out, report = run(tmp_path, "density", "[stable]\nalpha = 0.5\n")
    assert code == 0
    rows = read_csv(out / "data.csv")
    assert rows[0] == ["s", "g", "small_asymptotic", "tail_asymptotic"]
    assert len(rows) == 101
    jsonschema.validate(report, REPORT_SCHEMA)
    meta = json.loads((out / "meta.json").read_text(encoding="utf-8"))
    assert parse_config(meta["config_ini"]).stable.alpha == 0.5
    assert {"numpy", "scipy", "python"} <= set(meta["versions"])


def test_oracle_compare(tmp_path):
    code, _, report = run(tmp_path, "oracle-compare", "[grid]\npoints = 64\n")
    assert code == 0 and report["verdict"] is True
    assert report["constants"]["max_abs_difference"] <= 1e-6
    assert "quadrature" in report["diagnostics"]


def test_stability_with_zero_epsilon(tmp_path):
    text = SMALL_GRID + "[stability]\nepsilons = 0\n"
    code, out, report = run(tmp_path, "stability", text)
    assert code == 0 and report["verdict"] is True
    rows = read_csv(out / "data.csv")
    assert rows[0] == ["epsilon", "z", "t", "norm", "distance", "envelope"]
    assert all(float(r[4]) == 0.0 for r in rows[1:])


def test_gradient_plot_columns(tmp_path):
    code, out, report = run(tmp_path, "gradient-verify", FREE)
    jsonschema.validate(report, REPORT_SCHEMA)
    plot = read_csv(out / "plot_gradient_ratio.csv")
    assert plot[0] == ["t", "r", "grad_magnitude", "bound", "ratio"]
    assert code == (0 if report["verdict"] else 1)


@pytest.mark.parametrize("kind, text", [
    ("laplace-check", "[stable]\nalpha = 0.7\n"),
    ("kernel", SMALL_GRID),
    ("two-sided-verify", SMALL_GRID.replace("points = 32", "points = 32\nboundary = neumann")),
    ("holder-verify", FREE),
])
def test_every_kind_writes_valid_reports(tmp_path, kind, text):
    code, out, report = run(tmp_path, kind, text)
    jsonschema.validate(report, REPORT_SCHEMA)
    assert report["experiment"] == kind
    assert (out / "data.csv").exists() and (out / "meta.json").exists()
    assert code == report["exit_status"]
    assert not report["errors"]


def test_kernel_csv_header(tmp_path):
    _, out, report = run(tmp_path, "kernel", SMALL_GRID)
    assert read_csv(out / "data.csv")[0] == ["t", "x_index", "y_index", "value"]
    assert report["constants"]["max_row_mass"] <= 1 + 1e-8


def test_deterministic_output(tmp_path):
    _, a, _ = run(tmp_path, "two-sided-verify", FREE, "a")
    _, b, _ = run(tmp_path, "two-sided-verify", FREE, "b")
    for name in ["data.csv"] + sorted(p.name for p in a.glob("plot_*.csv")):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_refuses_non_empty_directory(tmp_path, capsys):
    out = tmp_path / "busy"
    out.mkdir()
    (out / "keep.txt").write_text("evidence")
    assert main(["density", "--out", str(out)]) == 2
    assert "non-empty" in capsys.readouterr().err
    assert (out / "keep.txt").read_text() == "evidence"


def test_config_error_exit_status(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nkind = density\n[stable]\nalpha = 1.5\n")
    assert main(["density", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 4: alpha must lie in (0,1)" in capsys.readouterr().err


def test_runtime_error_is_recorded(tmp_path):
    # kernel matrices need a grid, so a free-space domain fails inside the run
    cfg = parse_config("[grid]\ndomain = free\n[experiment]\nkind = kernel\n")
    bundle = run_experiment(cfg, tmp_path / "err")
    assert bundle.exit_status == 1 and bundle.errors
    assert not (tmp_path / "err" / "data.csv").exists()
    report = json.loads((tmp_path / "err" / "report.json").read_text())
    jsonschema.validate(report, REPORT_SCHEMA)


def test_empty_scan_has_no_plot_data(tmp_path):
    with pytest.raises(ValueError, match="scan produced no rows"):
        emit_plotdata(Bundle("gradient-verify"), tmp_path)


def test_help_documents_keys():
    proc = subprocess.run([sys.executable, "-m", "fracheat", "density", "--help"],
                          capture_output=True, text=True, check=True)
    assert "[quadrature]" in proc.stdout and "tail_order" in proc.stdout
