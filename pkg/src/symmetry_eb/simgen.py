"""Seeded synthetic datasets for the benchmark studies, and the R-MSE metric."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import linalg
from .errors import ConfigError, ShapeMismatch, UnknownGenerator
from .rng import make_rng

FAMILIES = ("ebmr", "caeb", "spatial")

_STREAM = {"ebmr": 11, "caeb": 12, "spatial": 13}


def _sigmoid(t):
    return 1.0 / (1.0 + np.exp(-t))


EBMR_GENERATORS: dict[str, Callable] = {
    "linear": lambda u, v, w: u + v + w,
    "sine-log": lambda u, v, w: np.sin(np.pi * u * v) + np.log1p(w),
    "sine-cos": lambda u, v, w: np.sin(np.pi * u) * np.cos(np.pi * v) / (1.0 + w**2),
    "tanh": lambda u, v, w: np.tanh(u + v + w),
    "reciprocal": lambda u, v, w: 1.0 / (1.0 + np.abs(u + v + w)),
}

# Latent part of the covariate-assisted generators; covariate sums are added.
CAEB_GENERATORS: dict[str, Callable] = {
    "linear": lambda u, v, w: u * v + w,
    "nonlinear": lambda u, v, w: np.sin(np.pi * u) * np.cos(np.pi * v) + 0.5 * w**2,
    "logistic": lambda u, v, w: _sigmoid(u + v) + w,
}

CAEB_ROW_DIM = 3
CAEB_COL_DIM = 4
CAEB_T_DF = 5
CAEB_BETA_AB = (2.0, 5.0)

SPATIAL_WEIGHTS = (0.5, 0.3, 0.2)
SPATIAL_MEANS = (0.0, 0.15, -0.25)
SPATIAL_SCALES = (1.0, 0.2, 0.35)
SPATIAL_BETA = (0.5, -1.2, 0.3)
SPATIAL_DOMAIN = (-10.0, 10.0)


@dataclass(frozen=True)
class SimSpec:
    family: str
    t0_id: str | None = None
    n: int = 20
    p: int | None = None
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.t0_id is None:
            object.__setattr__(self, "t0_id", "gm3" if self.family == "spatial" else "linear")
        if self.p is None:
            object.__setattr__(self, "p", len(SPATIAL_BETA) if self.family == "spatial" else self.n)
        valid = {"ebmr": EBMR_GENERATORS, "caeb": CAEB_GENERATORS, "spatial": {"gm3": None}}[self.family]
        if self.t0_id not in valid:
            raise UnknownGenerator(f"unknown generator {self.t0_id!r} for family {self.family!r}; expected {sorted(valid)}")
        if self.n < 1 or self.p < 1:
            raise ConfigError("n and p must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimDataset:
    z_star: np.ndarray
    x: np.ndarray
    tau: np.ndarray
    spec: SimSpec
    row_cov: np.ndarray | None = None
    col_cov: np.ndarray | None = None
    sites: np.ndarray | None = None
    covariates: np.ndarray | None = None
    beta_star: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


def gen_ebmr(spec: SimSpec) -> SimDataset:
    """``z*_ij = T0(u_i, v_j, u_ij)`` with iid uniforms; ``x = z* + N(0, 1/tau)``."""
    if spec.family != "ebmr":
        raise ConfigError("gen_ebmr needs an ebmr spec")
    t0 = EBMR_GENERATORS[spec.t0_id]
    rng = make_rng(spec.seed, _STREAM["ebmr"])
    n, p = spec.n, spec.p
    u = rng.random(n)
    v = rng.random(p)
    w = rng.random((n, p))
    z = t0(u[:, None], v[None, :], w)
    x = z + rng.standard_normal((n, p)) / np.sqrt(spec.tau)
    return SimDataset(z, x, np.full((n, p), float(spec.tau)), spec, extras={"u": u, "v": v, "w": w})


def gen_caeb(spec: SimSpec, zero_covariates: bool = False) -> SimDataset:
    """Covariate-assisted arrays: ``y_i`` has iid t5 entries, ``a_j`` iid Beta(2, 5).

    Draws are inverse-CDF transforms of the uniform stream.  ``zero_covariates``
    replaces both covariate arrays with zeros (a test hook).
    """
    if spec.family != "caeb":
        raise ConfigError("gen_caeb needs a caeb spec")
    t0 = CAEB_GENERATORS[spec.t0_id]
    rng = make_rng(spec.seed, _STREAM["caeb"])
    n, p = spec.n, spec.p
    y = stats.t.ppf(rng.random((n, CAEB_ROW_DIM)), CAEB_T_DF)
    a = stats.beta.ppf(rng.random((p, CAEB_COL_DIM)), *CAEB_BETA_AB)
    if zero_covariates:
        y = np.zeros_like(y)
        a = np.zeros_like(a)
    u = rng.random(n)
    v = rng.random(p)
    w = rng.random((n, p))
    z = y.sum(axis=1)[:, None] + a.sum(axis=1)[None, :] + t0(u[:, None], v[None, :], w)
    x = z + rng.standard_normal((n, p)) / np.sqrt(spec.tau)
    return SimDataset(z, x, np.full((n, p), float(spec.tau)), spec, row_cov=y, col_cov=a, extras={"u": u, "v": v, "w": w})


def spatial_truth():
    """The three-component spectral mixture used to simulate the latent field."""
    from .spatial import SpectralMixture

    return SpectralMixture(
        np.array(SPATIAL_WEIGHTS), np.array(SPATIAL_MEANS)[:, None], np.array(SPATIAL_SCALES)[:, None]
    )


def gen_spatial(spec: SimSpec) -> SimDataset:
    """Evenly spaced 1-D sites on [-10, 10], intercept plus Gaussian covariates.

    ``spec.p`` is the design width (intercept included); the coefficient
    vector is ``(0.5, -1.2, 0.3)`` for ``p = 3`` and is truncated or
    zero-padded otherwise.
    """
    from .spatial import gram

    if spec.family != "spatial":
        raise ConfigError("gen_spatial needs a spatial spec")
    if spec.n < 2:
        raise ConfigError("spatial simulation needs n >= 2")
    rng = make_rng(spec.seed, _STREAM["spatial"])
    n, p = spec.n, spec.p
    sites = np.linspace(*SPATIAL_DOMAIN, n)[:, None]
    A = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = np.zeros(p)
    k = min(p, len(SPATIAL_BETA))
    beta[:k] = SPATIAL_BETA[:k]
    chol = linalg.cholesky(gram(spatial_truth(), sites))
    z = linalg.mvn_sample(np.zeros(n), chol, rng)
    tau = np.full(n, float(spec.tau))
    x = A @ beta + z + rng.standard_normal(n) / np.sqrt(tau)
    return SimDataset(z, x, tau, spec, sites=sites, covariates=A, beta_star=beta, extras={"jitter": chol.jitter_used})


GENERATORS = {"ebmr": gen_ebmr, "caeb": gen_caeb, "spatial": gen_spatial}


def generate(spec: SimSpec) -> SimDataset:
    return GENERATORS[spec.family](spec)


def r_mse(z_hat, z_star, tau) -> float:
    """Mean squared error as a percentage of the MLE's: ``100 * mean(tau * err^2)``."""
    z_hat = np.asarray(z_hat, dtype=float)
    z_star = np.asarray(z_star, dtype=float)
    if z_hat.shape != z_star.shape:
        raise ShapeMismatch(f"estimate shape {z_hat.shape} != truth shape {z_star.shape}")
    tau = np.asarray(tau, dtype=float)
    try:
        tau = np.broadcast_to(tau, z_star.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"tau shape {tau.shape} incompatible with {z_star.shape}") from exc
    return float(np.mean(tau * (z_hat - z_star) ** 2) * 100.0)
