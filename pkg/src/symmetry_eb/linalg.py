"""Dense symmetric linear algebra and Gaussian sampling.

Thin wrappers over LAPACK (via numpy/scipy) that add an escalating
diagonal-jitter safeguard and keep track of how much jitter was needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

DEFAULT_JITTER = (0.0, 1e-10, 1e-8, 1e-6)


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor of ``M + jitter_used * I``."""

    lower: np.ndarray
    jitter_used: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> np.ndarray:
        """Reconstruct ``M + jitter_used * I``."""
        return self.lower @ self.lower.T


def check_symmetric(m, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionMismatch(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    if not np.array_equal(m, m.T):
        raise ValueError(f"{name} is not exactly symmetric")
    return m


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def cholesky(m, jitter_schedule: Sequence[float] = DEFAULT_JITTER) -> CholFactor:
    """Factor a symmetric matrix, escalating diagonal jitter until it succeeds.

    The schedule must start at 0 and be nondecreasing.  The first level at
    which LAPACK accepts the matrix is recorded in ``jitter_used``.
    """
    m = check_symmetric(m)
    schedule = [float(j) for j in jitter_schedule]
    if not schedule or schedule[0] != 0.0 or any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("jitter_schedule must be nonempty, nondecreasing and start at 0")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    eye = np.eye(m.shape[0])
    for jitter in schedule:
        try:
            lower = np.linalg.cholesky(m + jitter * eye if jitter else m)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(lower) > 0) and np.all(np.isfinite(lower)):
            return CholFactor(lower, jitter)
    raise NotPositiveDefinite(f"Cholesky failed at every jitter level up to {schedule[-1]:g}")


def logdet(f: CholFactor) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(f.lower))))


def solve(f: CholFactor, b) -> np.ndarray:
    """Solve ``(M + jitter I) x = b`` for a vector or matrix right-hand side."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim or b.ndim not in (1, 2):
        raise DimensionMismatch(f"right-hand side shape {b.shape} incompatible with dim {f.dim}")
    y = solve_triangular(f.lower, b, lower=True, check_finite=False)
    return solve_triangular(f.lower.T, y, lower=False, check_finite=False)


def half_solve(f: CholFactor, b) -> np.ndarray:
    """``L^{-1} b``; squared column norms give quadratic forms ``b^T M^{-1} b``."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.dim:
        raise DimensionMismatch(f"right-hand side shape {b.shape} incompatible with dim {f.dim}")
    return solve_triangular(f.lower, b, lower=True, check_finite=False)


def inverse(f: CholFactor) -> np.ndarray:
    """Explicit ``(M + jitter I)^{-1}`` from the factor (LAPACK potri)."""
    inv, info = lapack.dpotri(f.lower, lower=1)
    if info != 0:
        raise NotPositiveDefinite(f"potri failed with info={info}")
    return np.tril(inv) + np.tril(inv, -1).T


def mvn_sample(mean, f: CholFactor, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``mean + L eps`` with ``eps`` standard normal from ``rng``.

    With ``size`` given, returns an array of shape ``(size, dim)``.
    """
    mean = np.asarray(mean, dtype=float)
    if mean.shape != (f.dim,):
        raise DimensionMismatch(f"mean has shape {mean.shape}, factor has dim {f.dim}")
    if size is None:
        return mean + f.lower @ rng.standard_normal(f.dim)
    eps = rng.standard_normal((size, f.dim))
    return mean[None, :] + eps @ f.lower.T
