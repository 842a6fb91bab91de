"""Benchmark cells and resumable sweeps.

A cell is one (method, simulation setting, seed) triple.  ``run_cell``
simulates the data, fits the method and scores it with R-MSE.  ``run_sweep``
runs many cells in a worker pool, stores each finished cell as its own JSON
file and records it in a manifest so that an interrupted sweep resumes where
it stopped.  Summaries use medians and interquartile ranges with the
``lower`` quantile convention.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import product
from pathlib import Path
from typing import Any

import numpy as np

from . import ebmr, io, npmle, simgen, spatial
from .errors import ConfigError, SymmetryEBError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

METHODS = ("mle", "npmle", "npmle-residual", "ebmr-sep", "ebmr-joint", "caeb", "spatial")

_FAMILY_METHODS = {
    "ebmr": {"mle", "npmle", "ebmr-sep", "ebmr-joint"},
    "caeb": {"mle", "npmle", "ebmr-sep", "ebmr-joint", "caeb"},
    "spatial": {"mle", "npmle", "npmle-residual", "spatial"},
}

# Hyperparameters understood by cells; ``None`` means the method's default.
HYPER_DEFAULTS: dict[str, Any] = {
    "K": None,
    "G": npmle.DEFAULT_GRID_SIZE,
    "epochs": 500,
    "sgd_steps": 50,
    "lr": None,
    "batch_size": None,
    "samples": 200,
    "steps": 200,
    "restarts": 3,
    "joint_rule": "exact",
}


def _hyper(h: dict | None) -> dict:
    out = dict(HYPER_DEFAULTS)
    for k, v in (h or {}).items():
        if k not in HYPER_DEFAULTS:
            raise ConfigError(f"unknown hyperparameter {k!r}")
        out[k] = v
    return out


def ebmr_config(h: dict, seed: int) -> ebmr.EbmrConfig:
    return ebmr.EbmrConfig(
        K=int(h["K"] if h["K"] is not None else 10),
        epochs=int(h["epochs"]),
        sgd_steps_per_epoch=int(h["sgd_steps"]),
        lr=float(h["lr"] if h["lr"] is not None else 0.01),
        seed=int(seed),
        batch_size=None if h["batch_size"] is None else int(h["batch_size"]),
        joint_rule=str(h["joint_rule"]),
    )


def spatial_config(h: dict, seed: int) -> spatial.SpatialConfig:
    return spatial.SpatialConfig(
        K=int(h["K"] if h["K"] is not None else 3),
        steps=int(h["steps"]),
        lr=float(h["lr"] if h["lr"] is not None else 0.05),
        seed=int(seed),
        restarts=int(h["restarts"]),
    )


def residual_npmle(ds: simgen.SimDataset, G: int) -> tuple[np.ndarray, float]:
    """OLS on the covariates, then NPMLE on the residuals."""
    beta, *_ = np.linalg.lstsq(ds.covariates, ds.x, rcond=None)
    seq = npmle.SequenceData.from_precision(ds.x - ds.covariates @ beta, ds.tau)
    prior = npmle.fit_npmle(seq, G=G)
    return npmle.posterior_mean(seq, prior), prior.loglik_trace[-1]


def estimate(method: str, ds: simgen.SimDataset, h: dict, seed: int) -> tuple[np.ndarray, float | None]:
    """Point estimate of ``z*`` and the final objective value of the fit."""
    if method == "mle":
        return np.array(ds.x, dtype=float), None
    if method == "npmle":
        seq = npmle.SequenceData.from_precision(np.ravel(ds.x), np.ravel(ds.tau))
        prior = npmle.fit_npmle(seq, G=int(h["G"]))
        return npmle.posterior_mean(seq, prior).reshape(np.shape(ds.x)), prior.loglik_trace[-1]
    if method == "npmle-residual":
        return residual_npmle(ds, int(h["G"]))
    if method in ("ebmr-sep", "ebmr-joint", "caeb"):
        flavor = {"ebmr-sep": "separate", "ebmr-joint": "joint", "caeb": "relative"}[method]
        data = ebmr.NoisyMatrix(ds.x, ds.tau)
        cov = ebmr.CovariateArrays(ds.row_cov, ds.col_cov) if method == "caeb" else None
        fit_ = ebmr.fit(data, flavor, cov, ebmr_config(h, seed))
        z = ebmr.posterior_mean(fit_, data, int(h["samples"]), seed)
        return z, fit_.elbo_trace[-1]
    if method == "spatial":
        data = spatial.SpatialData(ds.sites, ds.covariates, ds.x, ds.tau)
        cfg = spatial_config(h, seed)
        sfit = spatial.fit_spectral(data, cfg.K, cfg)
        return spatial.posterior_mean_z(sfit.theta, data), sfit.objective
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class Cell:
    method: str
    spec: simgen.SimSpec

    @property
    def cell_id(self) -> str:
        s = self.spec
        return f"{self.method}__{s.family}_{s.t0_id}_n{s.n}_p{s.p}_tau{s.tau:g}__s{s.seed}"

    @property
    def setting(self) -> tuple:
        s = self.spec
        return (self.method, s.family, s.t0_id, s.n, s.p, float(s.tau))


def check_cell(cell: Cell) -> None:
    if cell.method not in METHODS:
        raise ConfigError(f"unknown method {cell.method!r}; expected one of {METHODS}")
    if cell.method not in _FAMILY_METHODS[cell.spec.family]:
        raise ConfigError(f"method {cell.method!r} does not apply to family {cell.spec.family!r}")


def run_cell(method: str, spec: simgen.SimSpec, hyper: dict | None = None) -> dict:
    """Simulate, fit and score one cell.  Returns a ResultRecord dict.

    ``runtime_seconds`` is the only field that is not a deterministic
    function of the inputs.
    """
    cell = Cell(method, spec)
    check_cell(cell)
    h = _hyper(hyper)
    ds = simgen.generate(spec)
    t0 = time.perf_counter()
    z_hat, final = estimate(method, ds, h, spec.seed)
    runtime = time.perf_counter() - t0
    return {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "spec": spec.to_dict(),
        "seed": spec.seed,
        "r_mse": simgen.r_mse(z_hat, ds.z_star, ds.tau),
        "runtime_seconds": runtime,
        "elbo_or_loglik_final": None if final is None else float(final),
    }


def _run_cell_safe(args: tuple[str, dict, dict]) -> dict:
    method, spec_d, hyper = args
    spec = simgen.SimSpec(**spec_d)
    try:
        rec = run_cell(method, spec, hyper)
        rec["status"] = "ok"
    except (SymmetryEBError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        rec = {
            "schema_version": SCHEMA_VERSION,
            "method": method,
            "spec": spec.to_dict(),
            "seed": spec.seed,
            "r_mse": None,
            "runtime_seconds": None,
            "elbo_or_loglik_final": None,
            "status": "failed",
            "error": f"{type(exc).__name__}: {exc}",
        }
    return rec


def quantile_lower(values, q: float) -> float:
    return float(np.quantile(np.asarray(values, dtype=float), q, method="lower"))


def summarize(records: list[dict]) -> list[dict]:
    """Median and IQR of R-MSE per (method, setting), in first-seen order."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        s = r["spec"]
        key = (r["method"], s["family"], s["t0_id"], s["n"], s["p"], float(s["tau"]))
        groups.setdefault(key, []).append(r)
    out = []
    for (method, family, t0, n, p, tau), recs in groups.items():
        ok = [r["r_mse"] for r in recs if r.get("status", "ok") == "ok"]
        row = {
            "method": method,
            "family": family,
            "t0_id": t0,
            "n": n,
            "p": p,
            "tau": tau,
            "n_ok": len(ok),
            "n_failed": len(recs) - len(ok),
            "median_r_mse": quantile_lower(ok, 0.5) if ok else None,
            "iqr_r_mse": (quantile_lower(ok, 0.75) - quantile_lower(ok, 0.25)) if ok else None,
        }
        out.append(row)
    return out


SUMMARY_COLUMNS = ("method", "family", "t0_id", "n", "p", "tau", "n_ok", "n_failed", "median_r_mse", "iqr_r_mse")


@dataclass
class SweepSpec:
    methods: list[str]
    family: str
    t0_ids: list[str]
    ns: list[int]
    taus: list[float]
    seeds: list[int]
    ps: list[int] | None = None
    hyper: dict = field(default_factory=dict)

    def cells(self) -> list[Cell]:
        out = []
        ps = self.ps or [None]
        for method, t0, n, p, tau, seed in product(self.methods, self.t0_ids, self.ns, ps, self.taus, self.seeds):
            spec = simgen.SimSpec(self.family, t0, int(n), None if p is None else int(p), float(tau), int(seed))
            cell = Cell(method, spec)
            check_cell(cell)
            out.append(cell)
        return out

    def fingerprint(self) -> str:
        blob = json.dumps({"family": self.family, "hyper": _hyper(self.hyper)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_sweep(sweep: SweepSpec, out_dir, workers: int = 1) -> list[dict]:
    """Run every missing cell and rewrite the summary tables.

    Finished cells live in ``cells/<id>.json``; ``manifest.json`` lists them
    with their status, runtime and completion time.  Failed cells are
    recorded and retried on the next run; successful ones are skipped.
    """
    out = Path(out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    fp = sweep.fingerprint()
    manifest = {"schema_version": SCHEMA_VERSION, "fingerprint": fp, "cells": {}}
    if manifest_path.exists():
        manifest = io.read_json(manifest_path)
        if manifest.get("fingerprint") != fp:
            raise ConfigError(f"{out} holds a sweep with different hyperparameters; use a fresh output directory")

    cells = sweep.cells()
    todo = [
        c for c in cells
        if manifest["cells"].get(c.cell_id, {}).get("status") != "ok" or not (out / "cells" / f"{c.cell_id}.json").exists()
    ]
    log.info("%d cells, %d to run", len(cells), len(todo))
    hyper = _hyper(sweep.hyper)
    jobs = [(c.method, c.spec.to_dict(), hyper) for c in todo]

    def record(cell: Cell, rec: dict) -> None:
        runtime = rec.pop("runtime_seconds", None)
        io.write_json(out / "cells" / f"{cell.cell_id}.json", rec)
        manifest["cells"][cell.cell_id] = {"status": rec["status"], "runtime_seconds": runtime, "completed_at": _now()}
        io.write_json(manifest_path, manifest)
        if rec["status"] != "ok":
            log.warning("cell %s failed: %s", cell.cell_id, rec.get("error"))

    if workers <= 1:
        for cell, job in zip(todo, jobs):
            record(cell, _run_cell_safe(job))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cell, rec in zip(todo, pool.map(_run_cell_safe, jobs)):
                record(cell, rec)

    records = [io.read_json(out / "cells" / f"{c.cell_id}.json") for c in cells]
    summary = summarize(records)
    io.write_csv(out / "results.csv", SUMMARY_COLUMNS, ([row[k] if row[k] is not None else "" for k in SUMMARY_COLUMNS] for row in summary))
    io.write_json(out / "results.json", {"schema_version": SCHEMA_VERSION, "quantile_method": "lower", "summary": summary, "cells": records})
    return records
