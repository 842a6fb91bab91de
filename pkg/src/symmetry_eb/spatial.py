"""Empirical Bayes spatial regression with a spectral-mixture GP prior.

Model: ``x = A beta + z + eps`` with ``z ~ GP(0, k_theta)``, a flat prior on
``beta`` and known noise precisions ``tau``.  The kernel comes from a
Gaussian-mixture spectral density with diagonal component covariances,

    k(delta) = sum_k w_k prod_j cos(2 pi mu_kj delta_j) exp(-2 pi^2 sigma_kj^2 delta_j^2).

``theta`` is fitted by minimizing the beta-profiled (REML) objective with
Adam on unconstrained coordinates: softmax logits for the weights, raw
means, and log scales.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import linalg
from .errors import DimensionMismatch, NotPositiveDefinite, RankDeficientDesign
from .linalg import CholFactor
from .nnet import AdamState, adam_update
from .rng import as_rng, make_rng

log = logging.getLogger(__name__)

_TWO_PI = 2.0 * np.pi
_TWO_PI_SQ = 2.0 * np.pi**2

_STREAM_INIT = 21


@dataclass
class SpectralMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    scales: np.ndarray  # (K, d)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        K = self.weights.shape[0]
        self.means = np.asarray(self.means, dtype=float).reshape(K, -1)
        self.scales = np.asarray(self.scales, dtype=float).reshape(K, -1)
        if self.means.shape != self.scales.shape:
            raise DimensionMismatch("means and scales must have the same shape")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def to_vector(self) -> np.ndarray:
        """Unconstrained coordinates ``[logits, means, log scales]``."""
        logits = np.log(self.weights)
        logits -= logits.mean()
        return np.concatenate([logits, self.means.ravel(), np.log(self.scales).ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, K: int, d: int) -> "SpectralMixture":
        vec = np.asarray(vec, dtype=float)
        logits = vec[:K]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        means = vec[K : K + K * d].reshape(K, d)
        scales = np.exp(vec[K + K * d :].reshape(K, d))
        return cls(w, means, scales)

    def spectral_density(self, freqs) -> np.ndarray:
        """Mixture density evaluated at frequencies of shape ``(m, d)``."""
        s = np.asarray(freqs, dtype=float).reshape(-1, self.d)
        out = np.zeros(s.shape[0])
        for w, mu, sd in zip(self.weights, self.means, self.scales):
            z = (s - mu) / sd
            out += w * np.exp(-0.5 * np.sum(z * z, axis=1)) / np.prod(np.sqrt(2 * np.pi) * sd)
        return out

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralMixture":
        return cls(np.asarray(d["weights"]), np.asarray(d["means"]), np.asarray(d["scales"]))


@dataclass(frozen=True)
class SpatialData:
    sites: np.ndarray  # (n, d)
    covariates: np.ndarray  # (n, p)
    x: np.ndarray  # (n,)
    tau: np.ndarray  # (n,)

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float)
        sites = sites[:, None] if sites.ndim == 1 else sites
        A = np.asarray(self.covariates, dtype=float)
        A = A[:, None] if A.ndim == 1 else A
        x = np.asarray(self.x, dtype=float).ravel()
        n = x.shape[0]
        try:
            tau = np.broadcast_to(np.asarray(self.tau, dtype=float), (n,)).astype(float)
        except ValueError as exc:
            raise DimensionMismatch("tau does not match x") from exc
        if sites.shape[0] != n or A.shape[0] != n:
            raise DimensionMismatch(f"sites {sites.shape}, covariates {A.shape} and x ({n},) disagree")
        if np.any(tau <= 0):
            raise ValueError("tau must be positive")
        if A.shape[1] < 1 or sites.shape[1] < 1:
            raise DimensionMismatch("need at least one covariate and one site dimension")
        for name, arr in (("sites", sites), ("covariates", A), ("x", x), ("tau", tau)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "covariates", A)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "tau", tau)

    @property
    def n(self) -> int:
        return self.x.shape[0]


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    cov_chol: CholFactor
    cov: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mean.shape != (self.cov_chol.dim,):
            raise DimensionMismatch("mean and covariance factor disagree")
        if self.cov is None:
            self.cov = self.cov_chol.matrix()

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))

    def sample(self, rng, size: int | None = None) -> np.ndarray:
        return linalg.mvn_sample(self.mean, self.cov_chol, as_rng(rng), size)


def _posterior(mean: np.ndarray, cov: np.ndarray) -> GaussianPosterior:
    cov = linalg.symmetrize(cov)
    scale = max(float(np.max(np.abs(np.diag(cov)))), 1e-300)
    schedule = [0.0] + [scale * j for j in (1e-12, 1e-10, 1e-8, 1e-6)]
    return GaussianPosterior(mean, linalg.cholesky(cov, schedule), cov)


# ----------------------------------------------------------------------------
# kernel


def kernel_eval(theta: SpectralMixture, delta) -> float:
    delta = np.asarray(delta, dtype=float).ravel()
    if delta.shape[0] != theta.d:
        raise DimensionMismatch(f"lag has dimension {delta.shape[0]}, kernel has {theta.d}")
    return float(kernel_matrix(theta, delta[None, None, :])[0, 0])


def kernel_matrix(theta: SpectralMixture, lags: np.ndarray) -> np.ndarray:
    """Kernel on an array of lags with trailing dimension ``d``."""
    out = np.zeros(lags.shape[:-1])
    for w, mu, sd in zip(theta.weights, theta.means, theta.scales):
        term = np.full(lags.shape[:-1], w)
        for j in range(theta.d):
            dj = lags[..., j]
            term = term * np.cos(_TWO_PI * mu[j] * dj) * np.exp(-_TWO_PI_SQ * sd[j] ** 2 * dj * dj)
        out += term
    return out


def _lags(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[:, None, :] - b[None, :, :]


def cross_gram(theta: SpectralMixture, sites_a, sites_b) -> np.ndarray:
    a = np.asarray(sites_a, dtype=float).reshape(-1, theta.d)
    b = np.asarray(sites_b, dtype=float).reshape(-1, theta.d)
    return kernel_matrix(theta, _lags(a, b))


def gram(theta: SpectralMixture, sites) -> np.ndarray:
    s = np.asarray(sites, dtype=float).reshape(-1, theta.d)
    m = kernel_matrix(theta, _lags(s, s))
    m = np.triu(m) + np.triu(m, 1).T  # exact symmetry
    np.fill_diagonal(m, theta.weights.sum())
    return m


# ----------------------------------------------------------------------------
# marginal likelihood


def _check_theta(theta: SpectralMixture, data: SpatialData) -> None:
    if theta.d != data.sites.shape[1]:
        raise DimensionMismatch(f"kernel dimension {theta.d} != site dimension {data.sites.shape[1]}")


def _check_design(A: np.ndarray) -> None:
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise RankDeficientDesign(f"design matrix of shape {A.shape} is rank deficient")


@dataclass
class _Profile:
    """Cholesky-based pieces shared by the objective, gradient and posteriors."""

    sigma: np.ndarray
    s_chol: CholFactor
    wa: np.ndarray  # W A
    wx: np.ndarray  # W x
    ata_chol: CholFactor  # chol(A^T W A)
    beta_hat: np.ndarray


def _profile(theta: SpectralMixture, data: SpatialData, sigma: np.ndarray | None = None) -> _Profile:
    _check_theta(theta, data)
    _check_design(data.covariates)
    if sigma is None:
        sigma = gram(theta, data.sites)
    S = sigma + np.diag(1.0 / data.tau)
    s_chol = linalg.cholesky(S)
    A = data.covariates
    wa = linalg.solve(s_chol, A)
    wx = linalg.solve(s_chol, data.x)
    atwa = linalg.symmetrize(A.T @ wa)
    try:
        ata_chol = linalg.cholesky(atwa, (0.0,))
    except NotPositiveDefinite as exc:
        raise RankDeficientDesign("A^T W A is not positive definite") from exc
    beta_hat = linalg.solve(ata_chol, A.T @ wx)
    return _Profile(sigma, s_chol, wa, wx, ata_chol, beta_hat)


def mmle_objective(theta: SpectralMixture, data: SpatialData) -> float:
    """``log det S + log det(A^T W A) + x^T W x - x^T W A beta_hat``."""
    pr = _profile(theta, data)
    x = data.x
    return float(
        linalg.logdet(pr.s_chol) + linalg.logdet(pr.ata_chol) + x @ pr.wx - x @ (pr.wa @ pr.beta_hat)
    )


@dataclass(frozen=True)
class _Pairs:
    """Upper-triangle site pairs; every kernel factor is even in the lag."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    mult: np.ndarray  # 1 on the diagonal, 2 off it
    lags: np.ndarray  # (u, d) distinct lags, exact floating-point dedup
    inverse: np.ndarray  # pair -> row of ``lags``

    @classmethod
    def of(cls, sites: np.ndarray) -> "_Pairs":
        n = sites.shape[0]
        rows, cols = np.triu_indices(n)
        mult = np.where(rows == cols, 1.0, 2.0)
        diffs = sites[rows] - sites[cols]
        if diffs.shape[1] == 1:
            lags, inverse = np.unique(diffs[:, 0], return_inverse=True)
            lags = lags[:, None]
        else:
            lags, inverse = np.unique(diffs, axis=0, return_inverse=True)
        return cls(n, rows, cols, mult, lags, inverse.ravel())

    def fold(self, m: np.ndarray) -> np.ndarray:
        """Weights on distinct lags with ``sum(m * F) == fold(m) @ f`` for symmetric ``m``."""
        return np.bincount(self.inverse, m[self.rows, self.cols] * self.mult, minlength=self.lags.shape[0])

    def unfold(self, v: np.ndarray) -> np.ndarray:
        vals = v[self.inverse]
        out = np.empty((self.n, self.n))
        out[self.rows, self.cols] = vals
        out[self.cols, self.rows] = vals
        return out


def mmle_value_and_gradient(
    theta: SpectralMixture, data: SpatialData, pairs: _Pairs | None = None
) -> tuple[float, np.ndarray]:
    """Objective and its gradient in the unconstrained coordinates of ``to_vector``.

    With ``P = W - W A (A^T W A)^{-1} A^T W`` and ``alpha = P x``, the
    derivative along any kernel parameter is ``sum((P - alpha alpha^T) * dS)``.
    """
    _check_theta(theta, data)
    if pairs is None:
        pairs = _Pairs.of(data.sites)
    K, d = theta.K, theta.d
    lags = pairs.lags
    m = lags.shape[0]
    cos = np.empty((K, d, m))
    sin = np.empty((K, d, m))
    gauss = np.empty((K, d, m))
    for k in range(K):
        for j in range(d):
            arg = _TWO_PI * theta.means[k, j] * lags[:, j]
            cos[k, j] = np.cos(arg)
            sin[k, j] = np.sin(arg)
            gauss[k, j] = np.exp(-_TWO_PI_SQ * theta.scales[k, j] ** 2 * lags[:, j] ** 2)
    factors = cos * gauss
    comp = np.prod(factors, axis=1)  # (K, m)
    sigma = pairs.unfold(theta.weights @ comp)
    pr = _profile(theta, data, sigma)
    x = data.x
    value = float(linalg.logdet(pr.s_chol) + linalg.logdet(pr.ata_chol) + x @ pr.wx - x @ (pr.wa @ pr.beta_hat))

    W = linalg.inverse(pr.s_chol)
    P = W - pr.wa @ linalg.solve(pr.ata_chol, pr.wa.T)
    alpha = pr.wx - pr.wa @ pr.beta_hat
    M = pairs.fold(P - np.outer(alpha, alpha))

    g_w = comp @ M
    g_logits = theta.weights * (g_w - theta.weights @ g_w)
    g_mu = np.empty((K, d))
    g_logsd = np.empty((K, d))
    for k in range(K):
        for j in range(d):
            others = np.prod(np.delete(factors[k], j, axis=0), axis=0) if d > 1 else 1.0
            dj = lags[:, j]
            base = M * (theta.weights[k] * others * gauss[k, j])
            g_mu[k, j] = -_TWO_PI * np.dot(base, sin[k, j] * dj)
            g_logsd[k, j] = -2.0 * _TWO_PI_SQ * theta.scales[k, j] ** 2 * np.dot(base, cos[k, j] * dj * dj)
    return value, np.concatenate([g_logits, g_mu.ravel(), g_logsd.ravel()])


def mmle_gradient(theta: SpectralMixture, data: SpatialData) -> np.ndarray:
    return mmle_value_and_gradient(theta, data)[1]


# ----------------------------------------------------------------------------
# fitting


@dataclass
class SpatialConfig:
    K: int = 3
    steps: int = 200
    lr: float = 0.05
    seed: int = 0
    restarts: int = 3


@dataclass
class SpatialFit:
    theta: SpectralMixture
    objective: float
    traces: list[list[float]] = field(default_factory=list, repr=False)


def frequency_bound(sites: np.ndarray) -> float:
    """Half the inverse median nearest-neighbour spacing (a Nyquist-style bound)."""
    sites = np.asarray(sites, dtype=float)
    if sites.shape[0] < 2:
        return 1.0
    dist, _ = cKDTree(sites).query(sites, k=2)
    nn = dist[:, 1]
    nn = nn[nn > 0]
    return 0.5 / float(np.median(nn)) if nn.size else 1.0


def initial_theta(sites: np.ndarray, K: int, rng: np.random.Generator) -> SpectralMixture:
    d = sites.shape[1]
    bound = frequency_bound(sites)
    means = rng.uniform(0.0, bound, size=(K, d))
    scales = np.full((K, d), 0.1 * bound)
    return SpectralMixture(np.full(K, 1.0 / K), means, scales)


def fit_spectral(data: SpatialData, K: int = 3, config: SpatialConfig | None = None) -> SpatialFit:
    """Adam on the profiled objective; best iterate over all restarts wins."""
    config = config or SpatialConfig(K=K)
    K = config.K if K is None else K
    if K < 1:
        raise ValueError("K must be at least 1")
    d = data.sites.shape[1]
    best_vec, best_val = None, np.inf
    traces = []
    pairs = _Pairs.of(data.sites)
    for r in range(config.restarts):
        theta = initial_theta(data.sites, K, make_rng(config.seed, _STREAM_INIT, r))
        vec = theta.to_vector()
        state = AdamState.for_params([vec], lr=config.lr)
        trace = []
        for _ in range(config.steps):
            theta = SpectralMixture.from_vector(vec, K, d)
            try:
                val, grad = mmle_value_and_gradient(theta, data, pairs)
            except NotPositiveDefinite:
                log.warning("restart %d: non-PD covariance, stopping this restart", r)
                break
            trace.append(val)
            if val < best_val:
                best_val, best_vec = val, vec.copy()
            (vec,), state = adam_update([vec], [grad], state)
        traces.append(trace)
    if best_vec is None:
        raise NotPositiveDefinite("no restart produced a finite objective")
    return SpatialFit(SpectralMixture.from_vector(best_vec, K, d), float(best_val), traces)


# ----------------------------------------------------------------------------
# posteriors


def posterior_beta(theta: SpectralMixture, data: SpatialData) -> GaussianPosterior:
    pr = _profile(theta, data)
    return _posterior(pr.beta_hat, linalg.inverse(pr.ata_chol))


def _residual_solve(theta: SpectralMixture, data: SpatialData, beta) -> tuple[np.ndarray, CholFactor, np.ndarray]:
    _check_theta(theta, data)
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape[0] != data.covariates.shape[1]:
        raise DimensionMismatch(f"beta has length {beta.shape[0]}, design has {data.covariates.shape[1]} columns")
    sigma = gram(theta, data.sites)
    s_chol = linalg.cholesky(sigma + np.diag(1.0 / data.tau))
    r = data.x - data.covariates @ beta
    return sigma, s_chol, linalg.solve(s_chol, r)


def posterior_z(theta: SpectralMixture, data: SpatialData, beta) -> GaussianPosterior:
    """Posterior of the latent field at the observed sites given ``beta``.

    Evaluated as ``mean = Sigma S^{-1} r`` and ``cov = Sigma - Sigma S^{-1} Sigma``,
    the same law as ``(Sigma^{-1} + D_tau)^{-1}`` without inverting Sigma.
    """
    sigma, s_chol, s_inv_r = _residual_solve(theta, data, beta)
    half = linalg.half_solve(s_chol, sigma)
    return _posterior(sigma @ s_inv_r, sigma - half.T @ half)


def krige(theta: SpectralMixture, data: SpatialData, beta, sites, observed_index) -> GaussianPosterior:
    """Posterior of the latent field on ``sites`` given ``beta``.

    ``sites`` must contain every observed site; ``observed_index[i]`` is the
    row of ``sites`` holding observed site ``i``.  Unobserved rows only enter
    through the prior covariance.
    """
    sites = np.asarray(sites, dtype=float).reshape(-1, theta.d)
    obs = np.asarray(observed_index, dtype=int).ravel()
    if obs.shape[0] != data.n or len(set(obs.tolist())) != data.n:
        raise DimensionMismatch("observed_index must map every observed site to a distinct row")
    if obs.size and (obs.min() < 0 or obs.max() >= sites.shape[0]):
        raise DimensionMismatch("observed_index out of range")
    if not np.allclose(sites[obs], data.sites, rtol=0, atol=1e-12):
        raise DimensionMismatch("sites[observed_index] do not coincide with the observed sites")
    _, s_chol, s_inv_r = _residual_solve(theta, data, beta)
    full = gram(theta, sites)
    cross = full[:, obs]  # (m, n)
    half = linalg.half_solve(s_chol, cross.T)
    return _posterior(cross @ s_inv_r, full - half.T @ half)


def match_sites(observed: np.ndarray, new_sites: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Union of observed and query sites.

    Returns ``(all_sites, observed_index, query_index)``: query sites that
    coincide exactly with an observed site reuse that row.
    """
    observed = np.asarray(observed, dtype=float)
    new_sites = np.asarray(new_sites, dtype=float).reshape(-1, observed.shape[1])
    lookup = {tuple(row): i for i, row in enumerate(observed)}
    extra, query = [], []
    for row in new_sites:
        key = tuple(row)
        if key in lookup:
            query.append(lookup[key])
        else:
            lookup[key] = observed.shape[0] + len(extra)
            extra.append(row)
            query.append(lookup[key])
    all_sites = np.vstack([observed] + ([np.array(extra)] if extra else []))
    return all_sites, np.arange(observed.shape[0]), np.array(query, dtype=int)


@dataclass
class JointSamples:
    beta: np.ndarray  # (S, p)
    z: np.ndarray  # (S, n)

    @property
    def beta_mean(self) -> np.ndarray:
        return self.beta.mean(axis=0)

    @property
    def z_mean(self) -> np.ndarray:
        return self.z.mean(axis=0)


def sample_joint(theta: SpectralMixture, data: SpatialData, n_samples: int, rng=None) -> JointSamples:
    """``beta`` from its marginal posterior, then ``z`` given each ``beta``."""
    rng = as_rng(rng)
    post_b = posterior_beta(theta, data)
    betas = post_b.sample(rng, n_samples)
    base = posterior_z(theta, data, np.zeros_like(post_b.mean))
    sigma = gram(theta, data.sites)
    s_chol = linalg.cholesky(sigma + np.diag(1.0 / data.tau))
    jac = -sigma @ linalg.solve(s_chol, data.covariates)
    eps = rng.standard_normal((n_samples, data.n))
    z = base.mean[None, :] + betas @ jac.T + eps @ base.cov_chol.lower.T
    return JointSamples(betas, z)


def posterior_mean_z(theta: SpectralMixture, data: SpatialData) -> np.ndarray:
    """``E[z | x]``: the conditional mean at ``beta_hat`` (it is linear in beta)."""
    return posterior_z(theta, data, posterior_beta(theta, data).mean).mean
