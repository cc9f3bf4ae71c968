import csv
import json

import pytest

from ddpgd import cli
from ddpgd.config import BenchmarkConfig, preset
from ddpgd.report import read_table

TIMING_COLUMNS = {"T_off", "T_on", "T"}


def _run(*argv):
    return cli.run([str(a) for a in argv])


def _strip_timings(path):
    return [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in read_table(path)]


@pytest.fixture(scope="module")
def offline_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert _run("offline", "--preset", "poisson_coarse", "--out", out) == 0
    return out


def test_offline_reports_match_stored_library(offline_run):
    rep = json.loads((offline_run / "report.json").read_text())
    man = json.loads((offline_run / "library" / "manifest.json").read_text())
    for name, m in rep["modes"].items():
        parts = man["surrogates"][name]["parts"]
        assert m["after"] == sum(p["rank"] for p in parts)
        assert m["N_IP"] == sum(p["name"].startswith("iface_") for p in parts)
        assert m["d_IP"] == 3
    rows = read_table(offline_run / "tables" / "offline.csv")
    assert list(rows[0]) == ["strategy", "subdomain", "N_AIP", "N_DP", "N_IP", "d_IP", "modes", "modes_before", "T_off"]
    assert [r["subdomain"] for r in rows] == ["omega1", "omega2"]
    assert {r["d_IP"] for r in rows} == {"3"}
    for r in rows:
        assert int(r["modes"]) == rep["modes"][r["subdomain"]]["after"]


def test_online_outputs(offline_run):
    assert _run("online", "--preset", "poisson_coarse", "--out", offline_run, "--mu", "30") == 0
    rep = json.loads((offline_run / "report.json").read_text())
    assert rep["command"] == "online" and "timing_note" in rep
    (tag,) = rep["iterations"]
    assert set(rep["errors"][tag]) == {"E2", "Einf"}
    with open(offline_run / "fields" / f"online_{tag}.csv") as fh:
        assert next(csv.reader(fh)) == ["x", "y", "u"]
    assert (offline_run / "fields" / f"error_map_{tag}.csv").exists()


def test_online_parameter_out_of_range(offline_run):
    assert _run("online", "--preset", "poisson_coarse", "--out", offline_run, "--mu", "99") == 3


def test_online_library_mismatch(offline_run, tmp_path):
    rc = _run("online", "--preset", "graetz", "--out", tmp_path, "--library", offline_run / "library")
    assert rc == 2


def test_usage_errors(tmp_path):
    assert _run("bogus") == 2
    assert _run("offline", "--preset", "nope", "--out", tmp_path) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "ddpgd-config/1", "benchmark": "poisson_9d"}))
    assert _run("offline", "--config", bad, "--out", tmp_path) == 2
    assert _run("offline", "--preset", "poisson_coarse", "--strategy", "aip:0", "--out", tmp_path) == 2


def test_config_round_trip():
    cfg = preset("graetz")
    assert BenchmarkConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    assert cfg.with_strategy("aip:3").strategy_label == "aip:3"


def test_fullorder_degenerate_and_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert _run("fullorder", "--preset", "poisson_coarse", "--out", out, "--mu", "3") == 0
    assert _strip_timings(a / "tables" / "fullorder.csv") == _strip_timings(b / "tables" / "fullorder.csv")
    assert (a / "fields" / "ddfem_3.csv").read_bytes() == (b / "fields" / "ddfem_3.csv").read_bytes()
    rep = json.loads((a / "report.json").read_text())
    assert rep["extra"]["ddfem_vs_monolithic_3"] <= 1e-5


def test_identical_runs_identical_csv(tmp_path):
    outs = [tmp_path / "x", tmp_path / "y"]
    for out in outs:
        assert _run("offline", "--preset", "poisson_coarse", "--out", out, "--seed", 5) == 0
        assert _run("online", "--preset", "poisson_coarse", "--out", out, "--mu", "3") == 0
    for t in ("offline.csv", "online.csv"):
        assert _strip_timings(outs[0] / "tables" / t) == _strip_timings(outs[1] / "tables" / t)
    for f in sorted((outs[0] / "fields").iterdir()):
        assert f.read_bytes() == (outs[1] / "fields" / f.name).read_bytes()
    for f in sorted((outs[0] / "library").iterdir()):
        if f.suffix == ".bin":
            assert f.read_bytes() == (outs[1] / "library" / f.name).read_bytes()


def test_compare_rows_sorted_and_single_strategy(tmp_path):
    assert _run("compare", "--preset", "poisson_coarse", "--out", tmp_path / "one", "--mu", "30") == 0
    rows = read_table(tmp_path / "one" / "tables" / "compare.csv")
    assert len(rows) == 1 and rows[0]["strategy"] == "reduced"
    assert _run("compare", "--preset", "poisson_coarse", "--out", tmp_path / "two", "--mu", "30",
                "--strategy", "reduced", "--strategy", "aip:1") == 0
    rows = read_table(tmp_path / "two" / "tables" / "compare.csv")
    assert [r["strategy"] for r in rows] == ["aip:1", "reduced"]
    assert [r["d_IP"] for r in rows] == ["4", "3"]


def test_compare_rejects_mixed_benchmarks(tmp_path):
    paths = []
    for name in ("poisson_coarse", "graetz"):
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(preset(name).to_dict()))
        paths.append(p)
    assert _run("compare", "--configs", *paths, "--out", tmp_path) == 2
