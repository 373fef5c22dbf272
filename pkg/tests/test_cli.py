import json
import subprocess
import sys
from importlib import resources

import pytest

from ucplab.cli import main
from ucplab.runner import read_table

CONFIGS = resources.files("ucplab").joinpath("data/configs")

WEIGHTS = """
[run]
command = "weight-check"

[weights]
taus = {taus}
delta = 0.0625
"""

BAD_SOLVE = """
[run]
command = "solve"

[grid]
half_width = 1.0
points_per_side = 33

[profile]
kind = "constant"
M0 = 10.0
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_weight_check_passes_for_admissible_taus(tmp_path, capsys):
    cfg = _write(tmp_path, "w.ini", WEIGHTS.format(taus="[16.25, 101.25]"))
    assert main(["weight-check", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    header, rows = read_table(tmp_path / "out" / "weights.csv")
    assert header == ["tau", "delta", "variant", "condition", "min_margin", "argmin_t", "pass"]
    assert {r["tau"] for r in rows} == {"16.25", "101.25"}
    assert all(r["pass"] == "true" for r in rows)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["outputs"] == ["weights.csv", "decay.csv"]
    assert str(tmp_path / "out" / "manifest.json") in capsys.readouterr().out


def test_missing_field_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.ini", BAD_SOLVE)
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 2
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "config"
    assert record["field"] == "profile.delta0"
    assert not out.exists()


def test_command_mismatch_and_threads(tmp_path, capsys):
    cfg = _write(tmp_path, "w.ini", WEIGHTS.format(taus="[16.25]"))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert main(["weight-check", "--config", str(cfg), "--threads", "0", "--out", str(tmp_path / "o")]) == 2
    assert main(["weight-check", "--config", str(tmp_path / "none.ini")]) == 2


def test_numerical_failure_exit_status(tmp_path, capsys):
    text = """
[run]
command = "doubling-scan"
[grid]
half_width = 1.0
points_per_side = 65
[field]
source = "constant"
shift = [0.0, 0.0]
[scan]
radii = [0.05]
R = 0.4
"""
    cfg = _write(tmp_path, "zero.ini", text)
    assert main(["doubling-scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    record = json.loads(capsys.readouterr().err.strip())
    assert record["error"] == "numerical"
    assert json.loads((tmp_path / "o" / "manifest.json").read_text())["status"] == "failed"


def test_doubling_scan_reports_sixteen_for_degree_three(tmp_path):
    assert main(["doubling-scan", "--config", str(CONFIGS / "doubling-degree3.ini"), "--out", str(tmp_path)]) == 0
    _, rows = read_table(tmp_path / "doubling.csv")
    at_zero = [float(r["K"]) for r in rows if r["x0_1"] == "0.0" and r["x0_2"] == "0.0"]
    assert at_zero[-1] == pytest.approx(16.0, rel=0.01)


def test_seed_override_changes_digest_only_for_seeded_runs(tmp_path):
    cfg = _write(tmp_path, "w.ini", WEIGHTS.format(taus="[16.25]"))
    main(["weight-check", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["weight-check", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "b")])
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["config_digest"] != b["config_digest"]
    assert (tmp_path / "a" / "weights.csv").read_text().splitlines()[2:] == (tmp_path / "b" / "weights.csv").read_text().splitlines()[2:]


def test_threads_do_not_change_output(tmp_path):
    cfg = str(CONFIGS / "carleman-1d.ini")
    main(["carleman-1d", "--config", cfg, "--out", str(tmp_path / "one")])
    main(["carleman-1d", "--config", cfg, "--threads", "4", "--out", str(tmp_path / "four")])
    assert (tmp_path / "one" / "carleman.csv").read_bytes() == (tmp_path / "four" / "carleman.csv").read_bytes()


def test_report_merges_weight_runs_sorted(tmp_path):
    for name, taus in (("high", "[101.25, 32.25]"), ("low", "[16.25]")):
        cfg = _write(tmp_path, f"{name}.ini", WEIGHTS.format(taus=taus))
        assert main(["weight-check", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    report = _write(
        tmp_path,
        "report.ini",
        '[run]\ncommand = "report"\n[report]\nmanifests = ["high/manifest.json", "low/manifest.json", "gone/manifest.json"]\n',
    )
    assert main(["report", "--config", str(report), "--out", str(tmp_path / "rep")]) == 0
    _, merged = read_table(tmp_path / "rep" / "merged_weights.csv")
    keys = [(float(r["tau"]), float(r["delta"])) for r in merged]
    assert keys == sorted(keys)
    assert {k[0] for k in keys} == {16.25, 32.25, 101.25}
    _, summary = read_table(tmp_path / "rep" / "summary.csv")
    assert any(r["invariant"] == "missing" and r["pass"] == "gap" for r in summary)
    assert sum(r["invariant"] == "weight_conditions" and r["pass"] == "true" for r in summary) == 2


def test_empty_report_has_header_only(tmp_path):
    cfg = _write(tmp_path, "r.ini", '[run]\ncommand = "report"\n[report]\nmanifests = []\n')
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path / "rep")]) == 0
    header, rows = read_table(tmp_path / "rep" / "summary.csv")
    assert header == ["invariant", "source", "value", "threshold", "pass"] and rows == []
    assert not (tmp_path / "rep" / "merged_weights.csv").exists()


def test_console_script_entry_point(tmp_path):
    cfg = _write(tmp_path, "bad.ini", BAD_SOLVE)
    proc = subprocess.run(
        [sys.executable, "-m", "ucplab.cli", "solve", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["field"] == "profile.delta0"
