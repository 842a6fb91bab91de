import csv
import json

import pytest

from symmetry_eb import bench, io, simgen
from symmetry_eb.errors import ConfigError

FAST = {"epochs": 2, "sgd_steps": 2, "samples": 5, "K": 2, "G": 30, "steps": 5, "restarts": 1}


def test_quantile_lower_convention():
    assert bench.quantile_lower([1, 2, 3, 4], 0.5) == 2.0
    assert bench.quantile_lower([4, 1, 3], 0.5) == 3.0
    assert bench.quantile_lower([1, 2, 3, 4, 5, 6, 7, 8], 0.25) == 2.0


def test_summarize_groups_and_ignores_failures():
    def rec(method, seed, r, status="ok"):
        spec = simgen.SimSpec("ebmr", "linear", 5, 5, 1.0, seed).to_dict()
        return {"method": method, "spec": spec, "r_mse": r, "status": status}

    rows = bench.summarize([rec("mle", 0, 10.0), rec("mle", 1, 30.0), rec("mle", 2, 20.0), rec("mle", 3, None, "failed")])
    assert len(rows) == 1
    row = rows[0]
    assert row["median_r_mse"] == 20.0 and row["iqr_r_mse"] == 10.0
    assert row["n_ok"] == 3 and row["n_failed"] == 1


@pytest.mark.parametrize("method", ["mle", "npmle", "ebmr-sep", "ebmr-joint"])
def test_run_cell_record(method):
    spec = simgen.SimSpec("ebmr", "linear", 6, 6, 1.0, 1)
    rec = bench.run_cell(method, spec, FAST)
    assert rec["schema_version"] == bench.SCHEMA_VERSION
    assert rec["method"] == method and rec["seed"] == 1
    assert rec["r_mse"] >= 0 and rec["runtime_seconds"] >= 0
    again = bench.run_cell(method, spec, FAST)
    assert again["r_mse"] == rec["r_mse"]


def test_mle_cell_matches_metric():
    spec = simgen.SimSpec("ebmr", "linear", 8, 8, 2.0, 0)
    ds = simgen.generate(spec)
    assert bench.run_cell("mle", spec)["r_mse"] == simgen.r_mse(ds.x, ds.z_star, ds.tau)


def test_spatial_and_caeb_cells():
    assert bench.run_cell("caeb", simgen.SimSpec("caeb", "linear", 5, 4, 1.0, 0), FAST)["r_mse"] > 0
    assert bench.run_cell("spatial", simgen.SimSpec("spatial", n=20, seed=0), FAST)["r_mse"] > 0
    assert bench.run_cell("npmle-residual", simgen.SimSpec("spatial", n=20, seed=0), FAST)["r_mse"] > 0


def test_method_family_checks():
    with pytest.raises(ConfigError):
        bench.run_cell("caeb", simgen.SimSpec("ebmr", "linear", 4, 4, 1.0, 0))
    with pytest.raises(ConfigError):
        bench.run_cell("nuts", simgen.SimSpec("ebmr", "linear", 4, 4, 1.0, 0))
    with pytest.raises(ConfigError):
        bench.run_cell("mle", simgen.SimSpec("ebmr", "linear", 4, 4, 1.0, 0), {"bogus": 1})


def sweep(**kw):
    base = dict(methods=["mle", "npmle"], family="ebmr", t0_ids=["linear"], ns=[5], taus=[1.0], seeds=[0, 1], hyper={"G": 20})
    base.update(kw)
    return bench.SweepSpec(**base)


def test_single_cell_sweep(tmp_path):
    records = bench.run_sweep(sweep(methods=["mle"], seeds=[3]), tmp_path)
    assert len(records) == 1 and records[0]["status"] == "ok"
    summary = io.read_json(tmp_path / "results.json")
    assert summary["schema_version"] == bench.SCHEMA_VERSION and summary["quantile_method"] == "lower"
    with open(tmp_path / "results.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(bench.SUMMARY_COLUMNS) and len(rows) == 2
    assert rows[1][:2] == ["mle", "ebmr"] and rows[1][6:8] == ["1", "0"]


def test_sweep_resumes_without_recomputation(tmp_path, monkeypatch):
    bench.run_sweep(sweep(), tmp_path)
    cell_bytes = {p.name: p.read_bytes() for p in (tmp_path / "cells").iterdir()}
    calls = []
    monkeypatch.setattr(bench, "_run_cell_safe", lambda job: calls.append(job))
    bench.run_sweep(sweep(), tmp_path)
    assert calls == []
    assert {p.name: p.read_bytes() for p in (tmp_path / "cells").iterdir()} == cell_bytes


def test_sweep_marks_failures_and_retries(tmp_path, monkeypatch):
    real = bench.estimate

    def flaky(method, ds, h, seed):
        if method == "npmle" and seed == 1:
            raise FloatingPointError("boom")
        return real(method, ds, h, seed)

    monkeypatch.setattr(bench, "estimate", flaky)
    records = bench.run_sweep(sweep(), tmp_path)
    failed = [r for r in records if r["status"] == "failed"]
    assert len(failed) == 1 and "boom" in failed[0]["error"]
    manifest = io.read_json(tmp_path / "manifest.json")
    assert sorted(v["status"] for v in manifest["cells"].values()) == ["failed", "ok", "ok", "ok"]
    monkeypatch.setattr(bench, "estimate", real)
    records = bench.run_sweep(sweep(), tmp_path)
    assert all(r["status"] == "ok" for r in records)


def test_sweep_rejects_changed_hyperparameters(tmp_path):
    bench.run_sweep(sweep(methods=["mle"]), tmp_path)
    with pytest.raises(ConfigError):
        bench.run_sweep(sweep(methods=["mle"], hyper={"G": 21}), tmp_path)


def test_cell_files_are_deterministic(tmp_path):
    bench.run_sweep(sweep(), tmp_path / "a")
    bench.run_sweep(sweep(), tmp_path / "b")
    for p in sorted((tmp_path / "a" / "cells").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / "cells" / p.name).read_bytes()
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    assert (tmp_path / "a" / "results.json").read_bytes() == (tmp_path / "b" / "results.json").read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    serial = bench.run_sweep(sweep(), tmp_path / "s", workers=1)
    parallel = bench.run_sweep(sweep(), tmp_path / "p", workers=2)
    assert json.dumps(serial, sort_keys=True) == json.dumps(parallel, sort_keys=True)
