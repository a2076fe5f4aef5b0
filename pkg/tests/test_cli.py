import csv
import json
import os
import subprocess
import sys

import pytest

from gluetree.cli import main, worker_count


def run_cli(args, cwd=None):
    return subprocess.run([sys.executable, "-m", "gluetree", *args],
                          capture_output=True, text=True, cwd=cwd)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def by_stat(rows, name):
    return [r for r in rows if r["statistic"] == name]


def test_gen_emits_lengths_and_prefix_sums(tmp_path):
    out = tmp_path / "gen.csv"
    assert main(["gen", "--seq", "power:1", "--n", "3",
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    a_rows = by_stat(rows, "a")
    assert [float(r["value"]) for r in a_rows] == [1.0, 0.5, 1.0 / 3.0]
    assert float(by_stat(rows, "h_of_a")[0]["value"]) > 0


def test_height_summary_contains_exact_half_series(tmp_path):
    out = tmp_path / "h.csv"
    code = main(["height", "--seq", "power:0.5", "--n", "100",
                 "--reps", "500", "--seed", "7", "--out", str(out)])
    assert code == 0
    rows = read_rows(out)
    assert len(by_stat(rows, "height")) == 500
    mean = float(by_stat(rows, "mean")[0]["value"])
    half = float(by_stat(rows, "half_h_of_a")[0]["value"])
    se = float(by_stat(rows, "mean")[0]["stderr"])
    assert abs(mean - half) <= 4 * se


def test_height_with_lambda_reports_bound(tmp_path):
    out = tmp_path / "h.csv"
    assert main(["height", "--seq", "power:0.5", "--n", "50", "--reps", "10",
                 "--lambda", "0.5", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert float(by_stat(rows, "mgf_ok")[0]["value"]) == 1.0


def test_repeat_invocations_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["height", "--seq", "power:0.5", "--n", "200", "--reps", "100",
            "--seed", "3"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_build_export_import_roundtrip(tmp_path):
    t = tmp_path / "t.csv"
    r1 = run_cli(["build", "--seq", "power:0.5", "--n", "100", "--seed", "1",
                  "--out", str(t)])
    assert r1.returncode == 0
    r2 = run_cli(["build", "--import", str(t)])
    assert r2.returncode == 0
    stats1 = {row.split(",")[6]: row.split(",")[7]
              for row in r1.stdout.strip().splitlines()[1:]}
    stats2 = {row.split(",")[6]: row.split(",")[7]
              for row in r2.stdout.strip().splitlines()[1:]}
    assert stats1 == stats2


def test_build_import_rejects_tampered_file(tmp_path):
    t = tmp_path / "t.csv"
    assert main(["build", "--seq", "power:0.5", "--n", "10", "--seed", "1",
                 "--out", str(t)]) == 0
    lines = t.read_text().splitlines()
    parts = lines[2].split(",")
    parts[2] = "99.0"  # offset far outside the parent
    lines[2] = ",".join(parts)
    t.write_text("\n".join(lines) + "\n")
    r = run_cli(["build", "--import", str(t)])
    assert r.returncode == 3
    assert "gluetree-error code=3" in r.stderr


def test_twopoint_mean_mode(tmp_path):
    out = tmp_path / "d.csv"
    assert main(["twopoint", "--seq", "power:0.5", "--K", "200",
                 "--reps", "2000", "--seed", "2", "--out", str(out)]) == 0
    rows = read_rows(out)
    mean = float(by_stat(rows, "mean")[0]["value"])
    exact = float(by_stat(rows, "exact_mean")[0]["value"])
    se = float(by_stat(rows, "mean")[0]["stderr"])
    assert abs(mean - exact) <= 4 * se
    assert float(by_stat(rows, "exact_mean")[0]["truncation_error"]) > 0


def test_twopoint_tail_mode(tmp_path):
    out = tmp_path / "tail.csv"
    assert main(["twopoint", "--seq", "power:0.5", "--K", "2000",
                 "--m", "200000", "--rgrid", "0.0625:0.5:4",
                 "--seed", "2", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert float(by_stat(rows, "tail_slope")[0]["value"]) > 0.5


def test_martingale_checkpoints(tmp_path):
    out = tmp_path / "m.csv"
    assert main(["martingale", "--seq", "power:0.5", "--n", "500",
                 "--i0", "5", "--m0", "0.4", "--reps", "4000",
                 "--checkpoints", "50,500", "--seed", "5",
                 "--out", str(out)]) == 0
    rows = by_stat(read_rows(out), "mass_mean")
    assert len(rows) == 2
    for r in rows:
        assert abs(float(r["value"]) - 0.4) <= 4 * float(r["stderr"])


def test_lp_command(tmp_path):
    out = tmp_path / "lp.csv"
    assert main(["lp", "--seq", "power:0.5", "--n", "2000", "--m", "1000",
                 "--n0", "50", "--parts", "8", "--reps", "4", "--seed", "9",
                 "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(by_stat(rows, "lp_tv")) == 4
    med = float(by_stat(rows, "median")[0]["value"])
    assert 0.0 <= med <= 1.0


def test_probe_command(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["probe", "--seq", "power:2", "--ngrid", "64:4096:4",
                 "--reps", "2", "--seed", "3", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(by_stat(rows, "max_height")) == 8
    assert by_stat(rows, "growth_slope")


def test_dimension_command_segment(tmp_path):
    out = tmp_path / "dim.csv"
    assert main(["dimension", "--seq", "file:" + _segment_file(tmp_path),
                 "--n", "1", "--epsgrid", "0.015625:0.125:4", "--reps", "2",
                 "--seed", "4", "--out", str(out)]) == 0
    rows = read_rows(out)
    slope = float(by_stat(rows, "box_dimension_slope")[0]["value"])
    assert 0.8 <= slope <= 1.2


def _segment_file(tmp_path):
    p = tmp_path / "seg.txt"
    p.write_text("1.0\n")
    return str(p)


def test_json_format_mirrors_rows(tmp_path):
    out = tmp_path / "g.json"
    assert main(["gen", "--seq", "power:1", "--n", "2", "--format", "json",
                 "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert isinstance(data, list)
    assert {r["statistic"] for r in data} >= {"a", "A", "sup_a", "h_of_a"}


def test_config_file_with_flag_override(tmp_path):
    cfgf = tmp_path / "cfg"
    cfgf.write_text("seq=power:1\nn=3\nseed=5\n")
    out = tmp_path / "o.csv"
    assert main(["gen", "--config", str(cfgf), "--n", "2",
                 "--out", str(out)]) == 0
    rows = by_stat(read_rows(out), "a")
    assert len(rows) == 2  # flag overrode the file's n=3


def test_config_file_json_form(tmp_path):
    cfgf = tmp_path / "cfg.json"
    cfgf.write_text(json.dumps({"seq": "power:1", "n": 2}))
    out = tmp_path / "o.csv"
    assert main(["gen", "--config", str(cfgf), "--out", str(out)]) == 0
    assert len(by_stat(read_rows(out), "a")) == 2


def test_config_file_rejects_unknown_keys(tmp_path):
    cfgf = tmp_path / "cfg"
    cfgf.write_text("seq=power:1\nbogus=1\n")
    assert main(["gen", "--config", str(cfgf), "--n", "2"]) == 3


def test_exit_codes():
    assert main(["gen", "--seq", "power:-1", "--n", "3"]) == 4
    assert main(["gen", "--seq", "power:1"]) == 4  # missing n
    assert main(["gen", "--seq", "nope:1", "--n", "3"]) == 4
    assert main(["height", "--seq", "power:1", "--n", "0"]) == 4


def test_usage_errors_exit_two():
    r = run_cli(["verify", "warp"])
    assert r.returncode == 2
    r = run_cli(["frobnicate"])
    assert r.returncode == 2


def test_unwritable_output_path(tmp_path):
    r = main(["gen", "--seq", "power:1", "--n", "2",
              "--out", str(tmp_path / "missing_dir" / "x.csv")])
    assert r == 3


def test_worker_count_env_cap(monkeypatch):
    monkeypatch.setenv("RTREE_THREADS", "1")
    assert worker_count(16) == 1
    monkeypatch.setenv("RTREE_THREADS", "4")
    assert worker_count(2) == 2
    monkeypatch.setenv("RTREE_THREADS", "bogus")
    with pytest.raises(Exception):
        worker_count(2)


def test_parallel_lp_matches_serial(tmp_path, monkeypatch):
    args = ["lp", "--seq", "power:0.5", "--n", "500", "--m", "300",
            "--n0", "20", "--parts", "4", "--reps", "3", "--seed", "11"]
    monkeypatch.setenv("RTREE_THREADS", "1")
    a = tmp_path / "serial.csv"
    assert main(args + ["--out", str(a)]) == 0
    monkeypatch.setenv("RTREE_THREADS", "3")
    b = tmp_path / "par.csv"
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
