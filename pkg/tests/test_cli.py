import json

import pytest

from arlequin.cli import main


@pytest.fixture()
def config_path(tmp_path):
    cfg = {
        "geometry": {"L": 4.0, "L_c": 2.0, "L_f": 1.0},
        "mesh": {"H": 0.5, "refine_ratio": 10},
        "coefficient": {"name": "constant", "params": {"c": 3.0}},
        "eps": [0.5],
        "optimizer": {"mode": "scalar", "init": 1.0},
        "oracle_resolutions": [16, 32],
        "thresholds": {"max_rel_error": 1e-4},
    }
    p = tmp_path / "study.json"
    p.write_text(json.dumps(cfg))
    return p


def run_cli(args):
    return main([str(a) for a in args])


def test_oracle_command(config_path, tmp_path, capsys):
    code = run_cli(["--config", config_path, "--out", tmp_path / "o", "oracle"])
    assert code == 0
    out = capsys.readouterr().out
    assert "k11,k22,k12" in out
    assert "3," in out or "3.0" in out or "3e" in out.lower() or " 3" in out


def test_solve_and_objective(config_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run_cli(["--config", config_path, "--out", out, "solve", "--kbar", "3.0"]) == 0
    assert (out / "solution.csv").exists()
    assert run_cli(["--config", config_path, "--out", out, "objective", "--kbar", "3.0"]) == 0
    text = capsys.readouterr().out
    assert "J" in text


def test_optimize_command(config_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run_cli(["--config", config_path, "--out", out, "optimize"]) == 0
    assert (out / "trace.csv").exists()
    assert "k_opt" in capsys.readouterr().out


def test_check_conditions(config_path, tmp_path, capsys):
    code = run_cli(["--config", config_path, "--out", tmp_path / "o",
                    "check-conditions", "--best-j", "0.0"])
    assert code == 0
    assert "condition1" in capsys.readouterr().out


def test_sweep_report_and_exit_codes(config_path, tmp_path, capsys):
    out = tmp_path / "o"
    assert run_cli(["--config", config_path, "--out", out, "sweep"]) == 0
    assert (out / "results.csv").exists()
    assert (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert "timings" in manifest and "config" in manifest
    assert run_cli(["--config", config_path, "--out", out, "report"]) == 0
    assert (out / "plot_convergence.py").exists()
    text = capsys.readouterr().out
    assert "empirical order" in text


def test_sweep_threshold_failure(tmp_path, capsys):
    # homogeneous medium but an impossible threshold: exit code must be nonzero
    cfg = {
        "geometry": {"L": 4.0, "L_c": 2.0, "L_f": 1.0},
        "mesh": {"H": 0.5, "refine_ratio": 10},
        "coefficient": {"name": "checkerboard", "params": {"a": 1.0, "b": 4.0}},
        "eps": [0.5],
        "oracle_resolutions": [16, 32],
        "thresholds": {"max_rel_error": 1e-12},
    }
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert run_cli(["--config", p, "--out", tmp_path / "o", "sweep"]) == 1


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text(json.dumps({"geometry": {"L": 1.0}}))
    assert run_cli(["--config", p, "--out", tmp_path / "o", "oracle"]) == 2
    assert "error:" in capsys.readouterr().err


def test_report_roundtrip_preserves_rows(config_path, tmp_path):
    out = tmp_path / "o"
    run_cli(["--config", config_path, "--out", out, "sweep"])
    from arlequin.cli import _read_rows
    from arlequin.harness import write_rows_csv
    import io

    rows = _read_rows(out / "results.csv")
    buf = io.StringIO()
    write_rows_csv(rows, buf)
    assert buf.getvalue() == (out / "results.csv").read_text()
