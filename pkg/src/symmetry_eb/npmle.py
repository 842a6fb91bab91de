"""Grid NPMLE for the heteroskedastic normal-means model.

``x_i ~ N(z_i, sd_i^2)`` with ``z_i`` iid from an unknown prior ``g``.  The
prior is restricted to a fixed grid of atoms and its weights are fitted by
EM, which monotonically increases the marginal log-likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, EmptyData, NumericalUnderflow

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

DEFAULT_GRID_SIZE = 300
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000


@dataclass(frozen=True)
class SequenceData:
    x: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        sd = np.broadcast_to(np.asarray(self.sd, dtype=float), x.shape).astype(float).ravel()
        if x.shape != sd.shape:
            raise DimensionMismatch("x and sd must have equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(sd))):
            raise ValueError("x and sd must be finite")
        if np.any(sd <= 0):
            raise ValueError("sd must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "sd", sd)

    @classmethod
    def from_precision(cls, x, tau) -> "SequenceData":
        return cls(x, 1.0 / np.sqrt(np.asarray(tau, dtype=float)))

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class GridPrior:
    atoms: np.ndarray
    weights: np.ndarray
    loglik_trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float).ravel()
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.atoms.shape != self.weights.shape or self.atoms.size == 0:
            raise DimensionMismatch("atoms and weights must be nonempty and of equal length")

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GridPrior":
        return cls(np.asarray(d["atoms"]), np.asarray(d["weights"]))


def build_grid(data: SequenceData, G: int = DEFAULT_GRID_SIZE, extend: float = 0.0) -> np.ndarray:
    """Equally spaced atoms over the data range.

    ``extend`` widens the range by that many median standard deviations on
    each side (0 keeps the grid on the data hull).  A degenerate range
    collapses to a single atom.
    """
    if len(data) == 0:
        raise EmptyData("cannot build a grid from no observations")
    if G < 1:
        raise ValueError("G must be positive")
    lo, hi = float(data.x.min()), float(data.x.max())
    if extend:
        pad = extend * float(np.median(data.sd))
        lo, hi = lo - pad, hi + pad
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, G)


def _log_lik_matrix(data: SequenceData, atoms: np.ndarray) -> np.ndarray:
    """``log N(x_i; atom_g, sd_i^2)`` as an ``n x G`` matrix."""
    with np.errstate(over="ignore"):
        r = (data.x[:, None] - atoms[None, :]) / data.sd[:, None]
        return -0.5 * r * r - np.log(data.sd)[:, None] - _LOG_SQRT_2PI


def _log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights)


def posterior_log_weights(data: SequenceData, prior: GridPrior) -> tuple[np.ndarray, np.ndarray]:
    """Log responsibilities (``n x G``) and per-observation log marginals."""
    joint = _log_lik_matrix(data, prior.atoms) + _log_weights(prior.weights)[None, :]
    marg = logsumexp(joint, axis=1)
    if not np.all(np.isfinite(marg)):
        bad = int(np.argmin(np.isfinite(marg)))
        raise NumericalUnderflow(f"observation {bad} has zero likelihood under every weighted atom")
    return joint - marg[:, None], marg


def posterior_weights(data: SequenceData, prior: GridPrior) -> np.ndarray:
    return np.exp(posterior_log_weights(data, prior)[0])


def marginal_loglik(data: SequenceData, prior: GridPrior) -> float:
    joint = _log_lik_matrix(data, prior.atoms) + _log_weights(prior.weights)[None, :]
    return float(np.sum(logsumexp(joint, axis=1)))


def posterior_mean(data: SequenceData, prior: GridPrior) -> np.ndarray:
    resp = posterior_weights(data, prior)
    mean = resp @ prior.atoms
    # Guard against last-ulp excursions outside the atom hull.
    return np.clip(mean, prior.atoms.min(), prior.atoms.max())


def posterior_sd(data: SequenceData, prior: GridPrior) -> np.ndarray:
    resp = posterior_weights(data, prior)
    mean = resp @ prior.atoms
    second = resp @ (prior.atoms**2)
    return np.sqrt(np.maximum(second - mean**2, 0.0))


def fit_npmle(
    data: SequenceData,
    atoms=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    G: int = DEFAULT_GRID_SIZE,
) -> GridPrior:
    """EM fixed-point iteration ``w_g <- mean_i resp_ig`` from uniform weights.

    Stops once the marginal log-likelihood improves by less than ``tol`` or
    after ``max_iter`` updates.  The likelihood matrix is row-rescaled once,
    so each iteration is two matrix-vector products.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if atoms is None:
        atoms = build_grid(data, G)
    atoms = np.asarray(atoms, dtype=float).ravel()
    if atoms.size == 0:
        raise ValueError("atoms must be nonempty")
    if len(data) == 0:
        raise EmptyData("no observations")

    ll = _log_lik_matrix(data, atoms)
    row_max = ll.max(axis=1)
    if not np.all(np.isfinite(row_max)):
        raise NumericalUnderflow("an observation has zero likelihood at every atom")
    lik = np.exp(ll - row_max[:, None])
    offset = float(np.sum(row_max))
    n, G_ = lik.shape

    w = np.full(G_, 1.0 / G_)
    marg = lik @ w
    trace = [offset + float(np.sum(np.log(marg)))]
    for _ in range(max_iter):
        w = w * (lik.T @ (1.0 / marg)) / n
        w /= w.sum()
        marg = lik @ w
        if np.any(marg <= 0):
            raise NumericalUnderflow("marginal density underflowed to zero")
        trace.append(offset + float(np.sum(np.log(marg))))
        if trace[-1] - trace[-2] < tol:
            break
    return GridPrior(atoms, w, trace)
