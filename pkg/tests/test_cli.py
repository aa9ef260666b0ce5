import json
import os

import pytest

from stochcg import cli
from stochcg.parallel import THREADS_ENV, ordered_map, resolve_workers
from stochcg.report import CSV_COLUMNS, RunReport, aggregate, SchemaError


@pytest.fixture(scope="module")
def instance_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("inst")
    path = d / "inst.json"
    assert cli.main(["generate", "--tanks", "2", "--outputs", "2", "--periods", "2",
                     "--seed", "7", "--out", str(path)]) == 0
    return path


def test_generate_is_byte_identical(tmp_path, instance_file):
    other = tmp_path / "again.json"
    cli.main(["generate", "--tanks", "2", "--outputs", "2", "--periods", "2", "--seed", "7",
              "--out", str(other)])
    assert other.read_bytes() == instance_file.read_bytes()


def test_generate_three_periods(tmp_path):
    out = tmp_path / "t3.json"
    cli.main(["generate", "--tanks", "2", "--outputs", "1", "--periods", "3", "--out", str(out)])
    data = json.loads(out.read_text())
    assert data["tree"]["nodes"] == 15
    assert data["tree"]["branching"] == [1, 2, 2, 2]


def test_generate_rejects_zero_tanks(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["generate", "--tanks", "0", "--outputs", "2", "--periods", "2"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def _solve(tmp_path, instance_file, method, *extra):
    out, log = tmp_path / f"{method}.json", tmp_path / f"{method}.csv"
    code = cli.main(["solve", "--method", method, "--instance", str(instance_file),
                     "--out", str(out), "--log", str(log), *extra])
    return code, json.loads(out.read_text()), log.read_text()


def test_methods_agree_and_csv_layout(tmp_path, instance_file):
    objs = {}
    for method in ("fullspace", "cg", "cgcs"):
        code, rep, csv_text = _solve(tmp_path, instance_file, method)
        assert code == 0
        objs[method] = rep["objective"]
        assert csv_text.splitlines()[0] == ",".join(CSV_COLUMNS)
    ref = objs["fullspace"]
    assert all(abs(v - ref) <= 1e-6 * abs(ref) for v in objs.values())


def test_sharing_adds_columns_at_first_iteration(tmp_path, instance_file):
    _, cg, _ = _solve(tmp_path, instance_file, "cg")
    _, cgcs, _ = _solve(tmp_path, instance_file, "cgcs")
    a = cgcs["records"][0]
    assert a["cols_added"] + a["cols_shared"] >= cg["records"][0]["cols_added"]
    assert "additional_columns_pct" in cgcs


def test_tiny_time_limit(tmp_path, instance_file):
    code, rep, _ = _solve(tmp_path, instance_file, "cgcs", "--time-limit", "0.001")
    assert code == 4
    assert rep["lb"] is None
    assert rep["ub"] is not None


def test_zero_timings_are_reproducible(tmp_path, instance_file):
    outs = []
    for threads in ("1", "3"):
        log = tmp_path / f"t{threads}.csv"
        cli.main(["solve", "--method", "cgcs", "--instance", str(instance_file), "--threads",
                  threads, "--timings", "zero", "--log", str(log), "--out", str(tmp_path / "r.json")])
        outs.append(log.read_bytes())
    assert outs[0] == outs[1]


def test_missing_instance_is_usage_error(tmp_path):
    code = cli.main(["solve", "--method", "cg", "--instance", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x.json")])
    assert code == 2


def _report(method="cg", status="converged", gap=0.0, t=2.0):
    return RunReport(method=method, instance_id="x", seed=0, dims=[2, 2, 2], status=status,
                     objective=1.0, lb=1.0, ub=1.0, gap=gap, eps=1e-4, iterations=3,
                     wall_time_s=t, perfect_parallel_s=t / 2, threads=1, pricing_mode="exact")


def test_aggregate_statistics():
    agg = aggregate([_report(t=3.0)])
    row = agg["rows"][0]
    assert row["NS"] == 0 and row["mean_time_s"] == 3.0
    agg = aggregate([_report(t=3.0), _report(status="time_limit", gap=0.0037)])
    row = agg["rows"][0]
    assert row["NS"] == 1
    assert row["mean_gap_pct"] == pytest.approx(0.37)
    with pytest.raises(SchemaError):
        aggregate([_report(), _report(method="cgcs")])


def test_report_command(tmp_path, instance_file, capsys):
    _, _, _ = _solve(tmp_path, instance_file, "cg")
    src = tmp_path / "cg.json"
    assert RunReport.from_dict(json.loads(src.read_text())).dumps() == src.read_text()
    out = tmp_path / "agg.json"
    assert cli.main(["report", "--logs", str(src), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["rows"][0]["NS"] == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": "other"}))
    assert cli.main(["report", "--logs", str(bad)]) == 2
    _solve(tmp_path, instance_file, "cgcs")
    assert cli.main(["report", "--logs", str(src), str(tmp_path / "cgcs.json")]) == 2


def test_thread_resolution(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_workers(None) == 3
    assert resolve_workers(2) == 2
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_workers(None) == 1
    assert ordered_map(lambda v: v * v, range(6), workers=3) == [0, 1, 4, 9, 16, 25]


def test_no_temp_files_left(tmp_path, instance_file):
    _solve(tmp_path, instance_file, "cg")
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]
