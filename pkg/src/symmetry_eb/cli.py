"""Command-line front end.

    symmetry-eb simulate|fit|krige|bench --config run.json [--set key=value ...]

The config is a flat JSON object; ``--set`` overrides single keys (values
are parsed as JSON when possible, otherwise kept as strings).  Unknown keys
and missing required keys are configuration errors.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import bench, ebmr, io, npmle, simgen, spatial
from .errors import ConfigError, DataError, EmptyData, SymmetryEBError
from .rng import make_rng

log = logging.getLogger("symmetry_eb")

EXIT_OK = 0
EXIT_CODES = {"config": 2, "data": 3, "numerical": 4}

SCHEMA_VERSION = 1

FIT_METHODS = ("npmle", "ebmr-sep", "ebmr-joint", "caeb", "spatial")
_FLAVOR = {"ebmr-sep": "separate", "ebmr-joint": "joint", "caeb": "relative"}
_STREAM_DRAWS = 31


# ----------------------------------------------------------------------------
# config schema


def _as_list(kind: Callable) -> Callable:
    def conv(v):
        if isinstance(v, str):
            v = [s for s in (t.strip() for t in v.split(",")) if s]
        if not isinstance(v, (list, tuple)):
            v = [v]
        return [kind(t) for t in v]

    return conv


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes"):
        return True
    if isinstance(v, str) and v.lower() in ("false", "0", "no"):
        return False
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    raise ValueError(f"not a boolean: {v!r}")


def _seed_list(v) -> list[int]:
    """A count ``N`` means seeds ``0..N-1``; a list is taken as given."""
    if isinstance(v, bool):
        raise ValueError("seeds must be a count or a list")
    if isinstance(v, int) or (isinstance(v, str) and v.strip().isdigit()):
        return list(range(int(v)))
    return _as_list(int)(v)


def _opt(kind: Callable) -> Callable:
    return lambda v: None if v is None else kind(v)


@dataclass(frozen=True)
class Key:
    conv: Callable
    default: Any = None
    required: bool = False


_COMMON = {
    "seed": Key(int, 0),
    "log_level": Key(str, "WARNING"),
}

_HYPER = {
    "K": Key(_opt(int)),
    "G": Key(int, npmle.DEFAULT_GRID_SIZE),
    "epochs": Key(int, 500),
    "sgd_steps": Key(int, 50),
    "lr": Key(_opt(float)),
    "batch_size": Key(_opt(int)),
    "samples": Key(int, 200),
    "steps": Key(int, 200),
    "restarts": Key(int, 3),
    "joint_rule": Key(str, "exact"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "simulate": {
        **_COMMON,
        "family": Key(str, required=True),
        "t0_id": Key(_opt(str)),
        "n": Key(int, 20),
        "p": Key(_opt(int)),
        "tau": Key(float, 1.0),
        "output_dir": Key(str, required=True),
    },
    "fit": {
        **_COMMON,
        **_HYPER,
        "method": Key(str, required=True),
        "output_dir": Key(str, required=True),
        "header": Key(_opt(_as_bool)),
        # array inputs
        "x_path": Key(_opt(str)),
        "tau_path": Key(_opt(str)),
        "tau": Key(_opt(float)),
        "row_cov_path": Key(_opt(str)),
        "col_cov_path": Key(_opt(str)),
        # spatial inputs
        "data_path": Key(_opt(str)),
        "site_cols": Key(_opt(_as_list(str))),
        "covariate_cols": Key(_opt(_as_list(str))),
        "x_col": Key(str, "x"),
        "tau_col": Key(str, "tau"),
        # outputs
        "truth_path": Key(_opt(str)),
        "n_draws": Key(int, 0),
        "spectral_grid": Key(int, 0),
        "spectral_max": Key(_opt(float)),
    },
    "krige": {
        **_COMMON,
        "checkpoint": Key(str, required=True),
        "sites_path": Key(str, required=True),
        "site_cols": Key(_opt(_as_list(str))),
        "header": Key(_opt(_as_bool)),
        "output_dir": Key(str, required=True),
    },
    "bench": {
        **_COMMON,
        **_HYPER,
        "methods": Key(_as_list(str), required=True),
        "family": Key(str, required=True),
        "t0_ids": Key(_opt(_as_list(str))),
        "ns": Key(_as_list(int), [20]),
        "ps": Key(_opt(_as_list(int))),
        "taus": Key(_as_list(float), [1.0]),
        "seeds": Key(_seed_list, list(range(10))),
        "workers": Key(int, 1),
        "output_dir": Key(str, required=True),
    },
}


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(command: str, path: str | None, overrides: list[str]) -> dict:
    raw: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a flat JSON object")
    for item in overrides:
        k, v = parse_override(item)
        raw[k] = v
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for name, key in schema.items():
        if name not in raw or raw[name] is None:
            if key.required:
                raise ConfigError(f"missing required config key: {name}")
            cfg[name] = key.default
            continue
        if isinstance(raw[name], (dict,)):
            raise ConfigError(f"config key {name} must be a scalar or list (flat config)")
        try:
            cfg[name] = key.conv(raw[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {name}: {raw[name]!r} ({exc})") from exc
    return cfg


def _require(cfg: dict, *names: str) -> None:
    for n in names:
        if cfg.get(n) is None:
            raise ConfigError(f"missing required config key: {n}")


def _hyper(cfg: dict) -> dict:
    return {k: cfg[k] for k in _HYPER}


# ----------------------------------------------------------------------------
# simulate


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_matrix(path: Path, m: np.ndarray) -> None:
    io.write_csv(path, None, np.atleast_2d(m))


def spatial_columns(d: int, p: int) -> tuple[list[str], list[str]]:
    return [f"s{j + 1}" for j in range(d)], [f"a{j + 1}" for j in range(p)]


def cmd_simulate(cfg: dict) -> dict:
    spec = simgen.SimSpec(cfg["family"], cfg["t0_id"], cfg["n"], cfg["p"], cfg["tau"], cfg["seed"])
    ds = simgen.generate(spec)
    out = Path(cfg["output_dir"])
    files: list[str] = []
    if spec.family == "spatial":
        site_names, cov_names = spatial_columns(ds.sites.shape[1], ds.covariates.shape[1])
        rows = np.column_stack([ds.sites, ds.covariates, ds.x, ds.tau])
        io.write_csv(out / "data.csv", site_names + cov_names + ["x", "tau"], rows)
        io.write_csv(out / "z_star.csv", ["z_star"], ds.z_star[:, None])
        files += ["data.csv", "z_star.csv"]
    else:
        _write_matrix(out / "x.csv", ds.x)
        _write_matrix(out / "tau.csv", ds.tau)
        _write_matrix(out / "z_star.csv", ds.z_star)
        files += ["x.csv", "tau.csv", "z_star.csv"]
        if spec.family == "caeb":
            _write_matrix(out / "row_cov.csv", ds.row_cov)
            _write_matrix(out / "col_cov.csv", ds.col_cov)
            files += ["row_cov.csv", "col_cov.csv"]
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec.to_dict(),
        "files": {f: _sha256(out / f) for f in files},
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if ds.beta_star is not None:
        manifest["beta_star"] = ds.beta_star
    io.write_json(out / "manifest.json", manifest)
    return manifest


# ----------------------------------------------------------------------------
# fit


def _read_matrix(path: str, header: bool | None) -> np.ndarray:
    _, values = io.read_csv(path, header)
    if values.shape[0] == 0:
        raise EmptyData(f"{path} has no data rows")
    return values


def load_array_inputs(cfg: dict) -> tuple[ebmr.NoisyMatrix, ebmr.CovariateArrays | None]:
    _require(cfg, "x_path")
    x = _read_matrix(cfg["x_path"], cfg["header"])
    if cfg["tau_path"] is not None:
        tau = _read_matrix(cfg["tau_path"], cfg["header"])
    elif cfg["tau"] is not None:
        tau = np.full(x.shape, cfg["tau"])
    else:
        raise ConfigError("missing required config key: tau_path (or a scalar tau)")
    if tau.shape != x.shape:
        raise DataError(f"tau has shape {tau.shape}, x has {x.shape}")
    data = ebmr.NoisyMatrix(x, tau)
    cov = None
    if cfg["method"] == "caeb":
        _require(cfg, "row_cov_path", "col_cov_path")
        cov = ebmr.CovariateArrays(_read_matrix(cfg["row_cov_path"], cfg["header"]), _read_matrix(cfg["col_cov_path"], cfg["header"]))
        cov.check(data)
    return data, cov


def load_spatial_inputs(cfg: dict) -> spatial.SpatialData:
    _require(cfg, "data_path", "site_cols", "covariate_cols")
    names, values = io.read_csv(cfg["data_path"], cfg["header"])
    if values.shape[0] == 0:
        raise EmptyData(f"{cfg['data_path']} has no data rows")
    sites = io.select_columns(names, values, cfg["site_cols"])
    A = io.select_columns(names, values, cfg["covariate_cols"])
    x = io.select_columns(names, values, [cfg["x_col"]])[:, 0]
    tau = io.select_columns(names, values, [cfg["tau_col"]])[:, 0]
    return spatial.SpatialData(sites, A, x, tau)


def _load_truth(path: str | None, shape: tuple, header: bool | None) -> np.ndarray | None:
    if path is None:
        return None
    _, z = io.read_csv(path, header)
    if z.size != int(np.prod(shape)):
        raise DataError(f"truth file {path} has {z.size} entries, expected {int(np.prod(shape))}")
    return z.reshape(shape)


def fit_array(cfg: dict, out: Path) -> tuple[np.ndarray, np.ndarray, float, dict]:
    """Returns ``(z_hat, tau, final objective, extras)`` after writing outputs."""
    data, cov = load_array_inputs(cfg)
    h = _hyper(cfg)
    method = cfg["method"]
    if method == "npmle":
        seq = npmle.SequenceData.from_precision(data.x.ravel(), data.tau.ravel())
        prior = npmle.fit_npmle(seq, G=h["G"])
        z = npmle.posterior_mean(seq, prior).reshape(data.shape)
        sd = npmle.posterior_sd(seq, prior).reshape(data.shape)
        io.write_json(out / "checkpoint.json", {"schema_version": SCHEMA_VERSION, "method": method, "prior": prior.to_dict(), "loglik_trace": prior.loglik_trace})
        _write_matrix(out / "posterior_mean.csv", z)
        _write_matrix(out / "posterior_sd.csv", sd)
        return z, data.tau, prior.loglik_trace[-1], {}
    config = bench.ebmr_config(h, cfg["seed"])
    fit_ = ebmr.fit(data, _FLAVOR[method], cov, config)
    z = ebmr.posterior_mean(fit_, data, h["samples"], cfg["seed"])
    ckpt = {"schema_version": SCHEMA_VERSION, "method": method, **fit_.to_dict()}
    io.write_json(out / "checkpoint.json", ckpt)
    _write_matrix(out / "posterior_mean.csv", z)
    if cfg["n_draws"] > 0:
        samples, _ = ebmr.surrogate_posterior_sample(fit_, data, cfg["n_draws"], draws_rng(cfg["seed"]))
        io.write_jsonl(out / "samples.jsonl", (s.ravel() for s in samples))
    return z, data.tau, fit_.elbo_trace[-1], {}


def draws_rng(seed: int) -> np.random.Generator:
    return make_rng(seed, _STREAM_DRAWS)


SUMMARY_COLUMNS = ("post_mean_z", "post_sd_z", "kriged")


def spatial_summary_rows(sites: np.ndarray, post: spatial.GaussianPosterior, kriged: np.ndarray, index=None):
    idx = np.arange(sites.shape[0]) if index is None else index
    sd = post.sd
    for r, i in enumerate(idx):
        yield [r, *sites[r], post.mean[i], sd[i], int(kriged[r])]


def spatial_header(d: int) -> list[str]:
    return ["site", *[f"s{j + 1}" for j in range(d)], *SUMMARY_COLUMNS]


def spectral_table(theta: spatial.SpectralMixture, m: int, fmax: float | None) -> tuple[list[str], np.ndarray]:
    """``psi`` on a regular grid of ``m`` points per axis over ``[-fmax, fmax]^d``."""
    if fmax is None:
        fmax = float(np.max(np.abs(theta.means) + 4.0 * theta.scales))
    axis = np.linspace(-fmax, fmax, m)
    grids = np.meshgrid(*([axis] * theta.d), indexing="ij")
    freqs = np.column_stack([g.ravel() for g in grids])
    return [*[f"f{j + 1}" for j in range(theta.d)], "psi"], np.column_stack([freqs, theta.spectral_density(freqs)])


def fit_spatial(cfg: dict, out: Path) -> tuple[np.ndarray, np.ndarray, float, dict]:
    data = load_spatial_inputs(cfg)
    h = _hyper(cfg)
    sc = bench.spatial_config(h, cfg["seed"])
    sfit = spatial.fit_spectral(data, sc.K, sc)
    post_b = spatial.posterior_beta(sfit.theta, data)
    post_z = spatial.krige(sfit.theta, data, post_b.mean, data.sites, np.arange(data.n))
    io.write_json(
        out / "checkpoint.json",
        {
            "schema_version": SCHEMA_VERSION,
            "method": "spatial",
            "theta": sfit.theta.to_dict(),
            "objective": sfit.objective,
            "objective_traces": sfit.traces,
            "data": {"sites": data.sites, "covariates": data.covariates, "x": data.x, "tau": data.tau},
        },
    )
    io.write_json(out / "beta.json", {"mean": post_b.mean, "covariance": post_b.cov})
    io.write_csv(
        out / "posterior.csv",
        spatial_header(data.sites.shape[1]),
        spatial_summary_rows(data.sites, post_z, np.zeros(data.n, dtype=bool)),
    )
    if cfg["spectral_grid"] > 0:
        header, table = spectral_table(sfit.theta, cfg["spectral_grid"], cfg["spectral_max"])
        io.write_csv(out / "spectral_density.csv", header, table)
    if cfg["n_draws"] > 0:
        draws = spatial.sample_joint(sfit.theta, data, cfg["n_draws"], draws_rng(cfg["seed"]))
        io.write_jsonl(out / "samples.jsonl", ({"beta": b, "z": z} for b, z in zip(draws.beta, draws.z)))
    return post_z.mean, data.tau, sfit.objective, {"beta_hat": post_b.mean}


def cmd_fit(cfg: dict) -> dict:
    method = cfg["method"]
    if method not in FIT_METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {FIT_METHODS}")
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if method == "spatial":
        z, tau, final, _ = fit_spatial(cfg, out)
    else:
        z, tau, final, _ = fit_array(cfg, out)
    runtime = time.perf_counter() - t0
    truth = _load_truth(cfg["truth_path"], z.shape, cfg["header"])
    spec_echo = {k: v for k, v in cfg.items() if k not in ("log_level",)}
    record = {
        "schema_version": SCHEMA_VERSION,
        "method": method,
        "spec": spec_echo,
        "seed": cfg["seed"],
        "r_mse": None if truth is None else simgen.r_mse(z, truth, tau),
        "runtime_seconds": runtime,
        "elbo_or_loglik_final": float(final),
    }
    io.write_json(out / "result.json", record)
    return record


# ----------------------------------------------------------------------------
# krige


def load_spatial_checkpoint(path: str) -> tuple[spatial.SpectralMixture, spatial.SpatialData]:
    ckpt = io.read_json(path)
    if ckpt.get("method") != "spatial":
        raise ConfigError(f"{path} is not a spatial checkpoint")
    try:
        theta = spatial.SpectralMixture.from_dict(ckpt["theta"])
        d = ckpt["data"]
        data = spatial.SpatialData(np.asarray(d["sites"]), np.asarray(d["covariates"]), np.asarray(d["x"]), np.asarray(d["tau"]))
    except KeyError as exc:
        raise DataError(f"{path} is missing field {exc}") from exc
    return theta, data


def _read_sites(cfg: dict, d: int) -> np.ndarray:
    try:
        names, values = io.read_csv(cfg["sites_path"], cfg["header"])
    except EmptyData:
        return np.empty((0, d))
    if cfg["site_cols"] is not None:
        values = io.select_columns(names, values, cfg["site_cols"])
    if values.shape[0] and values.shape[1] != d:
        raise DataError(f"new sites have {values.shape[1]} columns, the model has {d}")
    return values.reshape(-1, d)


def cmd_krige(cfg: dict) -> int:
    if not Path(cfg["checkpoint"]).exists():
        raise DataError(f"checkpoint not found: {cfg['checkpoint']}")
    theta, data = load_spatial_checkpoint(cfg["checkpoint"])
    new = _read_sites(cfg, theta.d)
    out = Path(cfg["output_dir"])
    header = spatial_header(theta.d)
    if new.shape[0] == 0:
        io.write_csv(out / "predictions.csv", header, [])
        return 0
    beta = spatial.posterior_beta(theta, data).mean
    all_sites, obs, query = spatial.match_sites(data.sites, new)
    post = spatial.krige(theta, data, beta, all_sites, obs)
    kriged = query >= data.n
    io.write_csv(out / "predictions.csv", header, spatial_summary_rows(new, post, kriged, query))
    return int(new.shape[0])


# ----------------------------------------------------------------------------
# bench


def cmd_bench(cfg: dict) -> list[dict]:
    family = cfg["family"]
    if family not in simgen.FAMILIES:
        raise ConfigError(f"unknown family {family!r}")
    t0_ids = cfg["t0_ids"] or [simgen.SimSpec(family).t0_id]
    sweep = bench.SweepSpec(
        methods=cfg["methods"],
        family=family,
        t0_ids=t0_ids,
        ns=cfg["ns"],
        taus=cfg["taus"],
        seeds=cfg["seeds"],
        ps=cfg["ps"],
        hyper=_hyper(cfg),
    )
    return bench.run_sweep(sweep, cfg["output_dir"], cfg["workers"])


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "krige": cmd_krige, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symmetry-eb", description="Empirical Bayes denoising under symmetry priors.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CODES["config"] if exc.code else EXIT_OK
    try:
        cfg = load_config(args.command, args.config, args.set)
        logging.basicConfig(level=getattr(logging, str(cfg["log_level"]).upper(), logging.WARNING), stream=sys.stderr)
        COMMANDS[args.command](cfg)
    except SymmetryEBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 4)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["data"]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
