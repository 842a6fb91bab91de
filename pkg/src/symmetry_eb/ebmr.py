"""Empirical Bayes matrix recovery with exchangeable-array priors.

The latent matrix is modelled through an Aldous-Hoover function
``z_ij = g(u_i, v_j, u_ij)`` (``g(u_i, u_j, u_ij)`` for jointly exchangeable
square arrays, ``g(y_i, a_j, u_i, v_j, u_ij)`` when row/column covariates
are available).  ``g`` is a small ReLU network fitted by maximizing a
discretized evidence lower bound: the row/column latents get categorical
variational factors on the grid ``k/K``, and the per-cell latent ``u_ij`` is
integrated out on the same grid, which produces the LSE-hat terms

    lse_hat(x, tau, u, v) = log sum_k exp(-tau/2 (x - g(u, v, k/K))^2) - log(K+1).

Fitting alternates exact softmax coordinate updates of the grid weights
with Adam steps on the network.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy.special import softmax

from . import _kernels, nnet
from .errors import (
    DimensionMismatch,
    EmptyBatch,
    FlavorMismatch,
    NonSquareJoint,
    NotFitted,
)
from .rng import as_rng, make_rng

log = logging.getLogger(__name__)

FLAVORS = ("separate", "joint", "relative")
JOINT_RULES = ("exact", "row")

# Upper bound on network evaluations held in memory at once.
_CHUNK_POINTS = 1 << 18

# RNG stream keys (see rng.make_rng).
_STREAM_INIT = 1
_STREAM_BATCH = 2
_STREAM_POSTERIOR = 3


@dataclass(frozen=True)
class NoisyMatrix:
    """Observed array ``x`` with per-entry noise precisions ``tau``."""

    x: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        tau = np.asarray(self.tau, dtype=float)
        try:
            tau = np.broadcast_to(tau, x.shape).astype(float)
        except ValueError as exc:
            raise DimensionMismatch(f"tau shape {tau.shape} does not match x {x.shape}") from exc
        if x.ndim != 2:
            raise DimensionMismatch("x must be a matrix")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(tau))):
            raise ValueError("x and tau must be finite")
        if np.any(tau <= 0):
            raise ValueError("tau must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "tau", tau)

    @property
    def shape(self) -> tuple[int, int]:
        return self.x.shape

    def permuted(self, rows=None, cols=None) -> "NoisyMatrix":
        x, tau = self.x, self.tau
        if rows is not None:
            x, tau = x[rows], tau[rows]
        if cols is not None:
            x, tau = x[:, cols], tau[:, cols]
        return NoisyMatrix(x, tau)


@dataclass(frozen=True)
class CovariateArrays:
    row_cov: np.ndarray
    col_cov: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.row_cov, dtype=float)
        c = np.asarray(self.col_cov, dtype=float)
        r = r[:, None] if r.ndim == 1 else r
        c = c[:, None] if c.ndim == 1 else c
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(c))):
            raise ValueError("covariates must be finite")
        object.__setattr__(self, "row_cov", r)
        object.__setattr__(self, "col_cov", c)

    @property
    def dim(self) -> int:
        return self.row_cov.shape[1] + self.col_cov.shape[1]

    def check(self, data: NoisyMatrix) -> None:
        n, p = data.shape
        if self.row_cov.shape[0] != n or self.col_cov.shape[0] != p:
            raise DimensionMismatch(
                f"covariates have {self.row_cov.shape[0]} rows / {self.col_cov.shape[0]} columns, data is {n}x{p}"
            )

    def standardizer(self) -> dict:
        def stats(a):
            mu = a.mean(axis=0)
            sd = a.std(axis=0)
            return mu, np.where(sd > 0, sd, 1.0)

        rm, rs = stats(self.row_cov)
        cm, cs = stats(self.col_cov)
        return {"row_center": rm, "row_scale": rs, "col_center": cm, "col_scale": cs}

    def standardized(self, st: dict | None) -> "CovariateArrays":
        if st is None:
            return self
        return CovariateArrays(
            (self.row_cov - st["row_center"]) / st["row_scale"],
            (self.col_cov - st["col_center"]) / st["col_scale"],
        )


@dataclass
class VariationalWeights:
    row_weights: np.ndarray
    col_weights: np.ndarray | None
    K: int

    @classmethod
    def uniform(cls, n: int, p: int | None, K: int) -> "VariationalWeights":
        K1 = K + 1
        cols = None if p is None else np.full((p, K1), 1.0 / K1)
        return cls(np.full((n, K1), 1.0 / K1), cols, K)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    def copy(self) -> "VariationalWeights":
        return VariationalWeights(
            self.row_weights.copy(), None if self.col_weights is None else self.col_weights.copy(), self.K
        )

    def column_side(self) -> np.ndarray:
        """Weights indexing the column latent (the row weights for joint arrays)."""
        return self.row_weights if self.col_weights is None else self.col_weights


@dataclass
class EbmrConfig:
    K: int = 10
    epochs: int = 500
    sgd_steps_per_epoch: int = 50
    lr: float = 0.01
    seed: int = 0
    hidden: tuple[int, ...] | None = None
    batch_size: int | None = None
    standardize_covariates: bool = True
    joint_rule: str = "exact"

    def hidden_layers(self, flavor: str) -> tuple[int, ...]:
        if self.hidden is not None:
            return tuple(self.hidden)
        return nnet.CAEB_HIDDEN if flavor == "relative" else nnet.SEP_HIDDEN


@dataclass
class EbmrFit:
    network: nnet.GNetwork
    weights: VariationalWeights
    flavor: str
    elbo_trace: list[float] = field(default_factory=list)
    # (elbo before, after row update, after column update) per weight phase
    weight_phase_log: list[tuple[float, float, float]] = field(default_factory=list, repr=False)
    covariates: CovariateArrays | None = None
    standardizer: dict | None = None

    @property
    def K(self) -> int:
        return self.weights.K

    def model_covariates(self) -> CovariateArrays | None:
        if self.covariates is None:
            return None
        return self.covariates.standardized(self.standardizer)

    def to_dict(self) -> dict:
        w = self.weights
        out = {
            "flavor": self.flavor,
            "K": w.K,
            "network": self.network.to_dict(),
            "row_weights": w.row_weights.tolist(),
            "col_weights": None if w.col_weights is None else w.col_weights.tolist(),
            "elbo_trace": list(self.elbo_trace),
        }
        if self.standardizer is not None:
            out["standardizer"] = {k: v.tolist() for k, v in self.standardizer.items()}
        return out

    @classmethod
    def from_dict(cls, d: dict, covariates: CovariateArrays | None = None) -> "EbmrFit":
        cw = d.get("col_weights")
        weights = VariationalWeights(
            np.asarray(d["row_weights"], dtype=float),
            None if cw is None else np.asarray(cw, dtype=float),
            int(d["K"]),
        )
        st = d.get("standardizer")
        if st is not None:
            st = {k: np.asarray(v, dtype=float) for k, v in st.items()}
        return cls(
            nnet.GNetwork.from_dict(d["network"]),
            weights,
            d["flavor"],
            list(d.get("elbo_trace", [])),
            covariates=covariates,
            standardizer=st,
        )


def _check_flavor(flavor: str) -> None:
    if flavor not in FLAVORS:
        raise FlavorMismatch(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")


def _grid_points(K: int) -> np.ndarray:
    """All ``(k1/K, k2/K, k3/K)`` triples, ``k3`` varying fastest."""
    g = np.arange(K + 1) / K
    a, b, c = np.meshgrid(g, g, g, indexing="ij")
    return np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)


def _cell_inputs(cov: CovariateArrays, ii: np.ndarray, jj: np.ndarray, K: int) -> np.ndarray:
    grid = _grid_points(K)
    m = grid.shape[0]
    feats = np.concatenate([cov.row_cov[ii], cov.col_cov[jj]], axis=1)
    out = np.empty((len(ii), m, feats.shape[1] + 3))
    out[:, :, : feats.shape[1]] = feats[:, None, :]
    out[:, :, feats.shape[1] :] = grid[None, :, :]
    return out.reshape(-1, out.shape[2])


def _cell_chunks(n_cells: int, K: int) -> Iterable[slice]:
    step = max(1, _CHUNK_POINTS // (K + 1) ** 3)
    for start in range(0, n_cells, step):
        yield slice(start, min(start + step, n_cells))


def g_table(net: nnet.GNetwork, K: int, cov: CovariateArrays | None = None, ii=None, jj=None) -> np.ndarray:
    """Network values on the latent grid.

    Without covariates: shape ``(K+1, K+1, K+1)`` indexed ``[k1, k2, k3]``.
    With covariates: shape ``(cells, K+1, K+1, K+1)`` for the cells ``(ii, jj)``.
    """
    K1 = K + 1
    if cov is None:
        return net(_grid_points(K)).reshape(K1, K1, K1)
    ii = np.asarray(ii)
    jj = np.asarray(jj)
    out = np.empty((len(ii), K1, K1, K1))
    for sl in _cell_chunks(len(ii), K):
        out[sl] = net(_cell_inputs(cov, ii[sl], jj[sl], K)).reshape(-1, K1, K1, K1)
    return out


def _lse_last(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Log-sum-exp over the last axis (kept) and the matching softmax."""
    m = a.max(axis=-1, keepdims=True)
    e = np.exp(a - m)
    tot = e.sum(axis=-1, keepdims=True)
    e /= tot
    return m + np.log(tot), e


def _all_cells(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    n, p = shape
    ii, jj = np.meshgrid(np.arange(n), np.arange(p), indexing="ij")
    return ii.ravel(), jj.ravel()


def _lse_from_g(x: np.ndarray, tau: np.ndarray, G: np.ndarray, K: int) -> np.ndarray:
    """LSE-hat for cells with values ``x``/``tau`` and grid values ``G[..., k3]``."""
    shape = (-1,) + (1,) * (G.ndim - 1)
    r = x.reshape(shape) - G
    a = -0.5 * tau.reshape(shape) * r * r
    return _lse_last(a)[0][..., 0] - np.log(K + 1)


def lse_table(data: NoisyMatrix, net: nnet.GNetwork, K: int, cov: CovariateArrays | None = None) -> np.ndarray:
    """``L[i, j, k1, k2] = lse_hat(x_ij, tau_ij, k1/K, k2/K)`` for every cell."""
    n, p = data.shape
    K1 = K + 1
    ii, jj = _all_cells(data.shape)
    xs, ts = data.x.ravel(), data.tau.ravel()
    out = np.empty((n * p, K1, K1))
    if cov is None:
        G = g_table(net, K).reshape(K1 * K1, K1)
        out[:] = (_kernels.shared_lse(xs, ts, G) - np.log(K1)).reshape(-1, K1, K1)
        return out.reshape(n, p, K1, K1)
    for sl in _cell_chunks(n * p, K):
        out[sl] = _lse_from_g(xs[sl], ts[sl], g_table(net, K, cov, ii[sl], jj[sl]), K)
    return out.reshape(n, p, K1, K1)


def lse_hat(x: float, tau: float, u: float, v: float, net: nnet.GNetwork, K: int, cov: tuple | None = None) -> float:
    """Single LSE-hat value; ``cov`` is an optional ``(y, a)`` covariate pair."""
    w = np.arange(K + 1) / K
    base = np.column_stack([np.full(K + 1, u), np.full(K + 1, v), w])
    if cov is not None:
        feats = np.concatenate([np.ravel(cov[0]), np.ravel(cov[1])])
        base = np.column_stack([np.tile(feats, (K + 1, 1)), base])
    g = net(base)
    a = -0.5 * tau * (x - g) ** 2
    m = a.max()
    return float(m + np.log(np.sum(np.exp(a - m))) - np.log(K + 1))


def _entropy(w: np.ndarray) -> float:
    pos = w > 0
    return float(-np.sum(w[pos] * np.log(w[pos])))


def expected_lse(L: np.ndarray, weights: VariationalWeights, flavor: str) -> float:
    """Weighted LSE-hat double sum (the ELBO without entropy terms)."""
    wu = weights.row_weights
    if flavor != "joint":
        return float(np.einsum("ijab,ia,jb->", L, wu, weights.col_weights, optimize=True))
    total = np.einsum("ijab,ia,jb->", L, wu, wu, optimize=True)
    idx = np.arange(wu.shape[0])
    Ld = L[idx, idx]  # (n, K1, K1)
    total -= np.einsum("iab,ia,ib->", Ld, wu, wu)
    total += np.einsum("iaa,ia->", Ld, wu)
    return float(total)


def _validate(data: NoisyMatrix, weights: VariationalWeights | None, flavor: str, cov) -> None:
    _check_flavor(flavor)
    n, p = data.shape
    if flavor == "joint" and n != p:
        raise NonSquareJoint(f"joint exchangeability needs a square array, got {n}x{p}")
    if flavor == "relative":
        if cov is None:
            raise FlavorMismatch("relative flavor requires covariates")
        cov.check(data)
    elif cov is not None:
        raise FlavorMismatch(f"covariates are only used by the relative flavor, not {flavor!r}")
    if weights is not None:
        if weights.row_weights.shape[0] != n:
            raise DimensionMismatch("row weights do not match data rows")
        if flavor != "joint" and (weights.col_weights is None or weights.col_weights.shape[0] != p):
            raise DimensionMismatch("column weights do not match data columns")


def elbo(data: NoisyMatrix, weights: VariationalWeights, net: nnet.GNetwork, flavor: str, cov=None, L=None) -> float:
    _validate(data, weights, flavor, cov)
    if L is None:
        L = lse_table(data, net, weights.K, cov)
    value = expected_lse(L, weights, flavor) + _entropy(weights.row_weights)
    if flavor != "joint":
        value += _entropy(weights.col_weights)
    return value


def joint_row_logits(L: np.ndarray, w: np.ndarray, i: int, rule: str = "exact") -> np.ndarray:
    """Logits for row ``i`` of a jointly exchangeable array.

    ``row``: diagonal term plus the row's off-diagonal cells.
    ``exact``: also adds column ``i``'s off-diagonal cells, which makes the
    softmax the exact coordinate maximizer of the ELBO for any ``x``.
    """
    mask = np.ones(w.shape[0], dtype=bool)
    mask[i] = False
    rho = np.diagonal(L[i, i]).copy()
    rho += np.einsum("jab,jb->a", L[i, mask], w[mask])
    if rule == "exact":
        rho += np.einsum("jba,jb->a", L[mask, i], w[mask])
    elif rule != "row":
        raise ValueError(f"unknown joint rule {rule!r}")
    return rho


def update_row_weights(
    data: NoisyMatrix,
    weights: VariationalWeights,
    net: nnet.GNetwork,
    flavor: str,
    cov=None,
    L=None,
    joint_rule: str = "exact",
) -> VariationalWeights:
    _validate(data, weights, flavor, cov)
    if L is None:
        L = lse_table(data, net, weights.K, cov)
    if flavor != "joint":
        rho = np.einsum("ijab,jb->ia", L, weights.col_weights, optimize=True)
        return replace(weights, row_weights=softmax(rho, axis=1))
    w = weights.row_weights.copy()
    if joint_rule == "row":
        # Parallel sweep against a frozen snapshot, as written in the algorithm.
        frozen = w.copy()
        for i in range(w.shape[0]):
            w[i] = softmax(joint_row_logits(L, frozen, i, "row"))
    else:
        for i in range(w.shape[0]):
            w[i] = softmax(joint_row_logits(L, w, i, "exact"))
    return replace(weights, row_weights=w)


def update_col_weights(
    data: NoisyMatrix, weights: VariationalWeights, net: nnet.GNetwork, flavor: str, cov=None, L=None
) -> VariationalWeights:
    if flavor == "joint":
        raise FlavorMismatch("jointly exchangeable arrays have no separate column weights")
    _validate(data, weights, flavor, cov)
    if L is None:
        L = lse_table(data, net, weights.K, cov)
    rho = np.einsum("ijab,ia->jb", L, weights.row_weights, optimize=True)
    return replace(weights, col_weights=softmax(rho, axis=1))


def _cell_weights(weights: VariationalWeights, flavor: str, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    """Variational mass ``Omega[c, k1, k2]`` on the latent pair of each cell."""
    om = weights.row_weights[ii][:, :, None] * weights.column_side()[jj][:, None, :]
    if flavor == "joint":
        diag = ii == jj
        if np.any(diag):
            om[diag] = 0.0
            d = np.arange(weights.K + 1)
            om[np.flatnonzero(diag)[:, None], d[None, :], d[None, :]] = weights.row_weights[ii[diag]]
    return om


def network_objective_and_grad(
    data: NoisyMatrix,
    weights: VariationalWeights,
    net: nnet.GNetwork,
    flavor: str,
    cov=None,
    minibatch=None,
) -> tuple[float, nnet.NetGrads]:
    """Weighted LSE-hat sum over the cells in ``minibatch`` and its gradient.

    ``minibatch`` is a pair of index arrays ``(rows, cols)``; ``None`` means
    every cell.  The gradient flows through the softmax over ``u_ij`` into
    the network output and then into the parameters.
    """
    _validate(data, weights, flavor, cov)
    K, K1 = weights.K, weights.K + 1
    if minibatch is None:
        ii, jj = _all_cells(data.shape)
    else:
        ii, jj = (np.asarray(a, dtype=int).ravel() for a in minibatch)
        if ii.size == 0:
            raise EmptyBatch("minibatch has no cells")
        if ii.shape != jj.shape:
            raise DimensionMismatch("row and column index arrays differ in length")
    xs, ts = data.x[ii, jj], data.tau[ii, jj]

    objective = 0.0
    if cov is None:
        G = g_table(net, K).reshape(K1 * K1, K1)
        om = _cell_weights(weights, flavor, ii, jj).reshape(-1, K1 * K1)
        total, upstream = _kernels.shared_objective_grad(xs, ts, G, om)
        objective = total - np.log(K1) * float(om.sum())
        grads = nnet.grad_scalar_loss(net, _grid_points(K), upstream.ravel())
        return objective, grads

    grads = None
    for sl in _cell_chunks(len(ii), K):
        om = _cell_weights(weights, flavor, ii[sl], jj[sl])
        inputs = _cell_inputs(cov, ii[sl], jj[sl], K)
        om = om.reshape(-1, K1 * K1)
        G = net(inputs).reshape(-1, K1 * K1, K1)
        total, up = _kernels.percell_objective_grad(xs[sl], ts[sl], G, om)
        objective += total - np.log(K1) * float(om.sum())
        g = nnet.grad_scalar_loss(net, inputs, up.ravel())
        grads = g if grads is None else grads + g
    return objective, grads


def fit(
    data: NoisyMatrix,
    flavor: str = "separate",
    cov: CovariateArrays | None = None,
    config: EbmrConfig | None = None,
    callback: Callable[[int, EbmrFit], None] | None = None,
) -> EbmrFit:
    """Block-coordinate variational fit of the Aldous-Hoover network.

    Each epoch updates row weights, column weights (not for joint arrays),
    then takes ``sgd_steps_per_epoch`` Adam ascent steps on the network.
    A final weight phase after the last epoch aligns the weights with the
    returned network.
    """
    config = config or EbmrConfig()
    _validate(data, None, flavor, cov)
    if config.K < 1:
        raise ValueError("K must be at least 1")
    n, p = data.shape
    K = config.K

    standardizer = None
    model_cov = cov
    if cov is not None and config.standardize_covariates:
        standardizer = cov.standardizer()
        model_cov = cov.standardized(standardizer)

    d_in = 3 + (model_cov.dim if model_cov is not None else 0)
    net = nnet.init_network([d_in, *config.hidden_layers(flavor), 1], make_rng(config.seed, _STREAM_INIT))
    weights = VariationalWeights.uniform(n, None if flavor == "joint" else p, K)
    adam = nnet.AdamState.for_params(net.parameters(), lr=config.lr)
    batch_rng = make_rng(config.seed, _STREAM_BATCH)
    result = EbmrFit(net, weights, flavor, covariates=cov, standardizer=standardizer)

    def weight_phase():
        L = lse_table(data, result.network, K, model_cov)
        before = elbo(data, result.weights, result.network, flavor, model_cov, L)
        result.weights = update_row_weights(data, result.weights, result.network, flavor, model_cov, L, config.joint_rule)
        mid = elbo(data, result.weights, result.network, flavor, model_cov, L)
        after = mid
        if flavor != "joint":
            result.weights = update_col_weights(data, result.weights, result.network, flavor, model_cov, L)
            after = elbo(data, result.weights, result.network, flavor, model_cov, L)
        result.weight_phase_log.append((before, mid, after))
        result.elbo_trace.append(after)

    n_cells = n * p
    for epoch in range(config.epochs):
        weight_phase()
        for _ in range(config.sgd_steps_per_epoch):
            batch = None
            if config.batch_size is not None and config.batch_size < n_cells:
                flat = np.sort(batch_rng.choice(n_cells, size=config.batch_size, replace=False))
                batch = (flat // p, flat % p)
            _, grads = network_objective_and_grad(data, result.weights, result.network, flavor, model_cov, batch)
            result.network, adam = nnet.adam_step(result.network, grads.scaled(-1.0), adam)
        if callback is not None:
            callback(epoch, result)
        if epoch % 50 == 0:
            log.debug("epoch %d elbo %.6g", epoch, result.elbo_trace[-1])
    weight_phase()
    return result


def _require_fitted(fit_: EbmrFit | None, data: NoisyMatrix) -> None:
    if fit_ is None or fit_.network is None or fit_.weights is None:
        raise NotFitted("no fitted EBMR state")
    if fit_.weights.row_weights.shape[0] != data.shape[0]:
        raise DimensionMismatch("fit does not match data rows")
    if fit_.weights.column_side().shape[0] != data.shape[1]:
        raise DimensionMismatch("fit does not match data columns")


def _conditional_tables(fit_: EbmrFit, data: NoisyMatrix):
    """Network values and ``u_ij`` conditionals for every cell and latent pair.

    Returns ``(G, Q)`` with shape ``(n, p, K+1, K+1, K+1)`` each (``G`` is
    broadcast from the shared grid when there are no covariates).
    """
    K, K1 = fit_.K, fit_.K + 1
    n, p = data.shape
    cov = fit_.model_covariates()
    if cov is None:
        G = np.broadcast_to(g_table(fit_.network, K), (n, p, K1, K1, K1))
    else:
        ii, jj = _all_cells(data.shape)
        G = g_table(fit_.network, K, cov, ii, jj).reshape(n, p, K1, K1, K1)
    a = -0.5 * data.tau[:, :, None, None, None] * (data.x[:, :, None, None, None] - G) ** 2
    Q = softmax(a, axis=-1)
    return G, Q


def _draw_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One index per row of ``probs`` by inverse CDF."""
    cum = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None] * cum[..., -1:]
    idx = np.sum(cum < u, axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _draw_latent_pairs(fit_: EbmrFit, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    a = _draw_categorical(fit_.weights.row_weights, rng)
    b = a if fit_.flavor == "joint" else _draw_categorical(fit_.weights.col_weights, rng)
    return a, b


def surrogate_posterior_sample(fit_: EbmrFit, data: NoisyMatrix, n_samples: int, rng=None):
    """Draw ``z`` from the fitted variational surrogate of the posterior.

    Per sample: ``u_i`` and ``v_j`` from the grid weights, then ``u_ij`` from
    its closed-form grid conditional, and ``z_ij = g(u_i, v_j, u_ij)``.
    Returns ``(samples, mean)`` with samples shaped ``(n_samples, n, p)``.
    """
    _require_fitted(fit_, data)
    rng = as_rng(rng)
    G, Q = _conditional_tables(fit_, data)
    n, p = data.shape
    rows, cols = np.arange(n)[:, None], np.arange(p)[None, :]
    samples = np.empty((n_samples, n, p))
    for s in range(n_samples):
        a, b = _draw_latent_pairs(fit_, rng)
        q = Q[rows, cols, a[:, None], b[None, :]]
        k = _draw_categorical(q, rng)
        samples[s] = G[rows, cols, a[:, None], b[None, :], k]
    return samples, samples.mean(axis=0)


def rao_blackwell_posterior_mean(fit_: EbmrFit, data: NoisyMatrix, n_samples: int = 200, rng=None) -> np.ndarray:
    """Average over ``(u_i, v_j)`` draws of the exact ``u_ij``-conditional mean."""
    _require_fitted(fit_, data)
    rng = as_rng(rng)
    G, Q = _conditional_tables(fit_, data)
    cond_mean = np.sum(Q * G, axis=-1)  # (n, p, K1, K1)
    n, p = data.shape
    rows, cols = np.arange(n)[:, None], np.arange(p)[None, :]
    total = np.zeros((n, p))
    for _ in range(n_samples):
        a, b = _draw_latent_pairs(fit_, rng)
        total += cond_mean[rows, cols, a[:, None], b[None, :]]
    return total / n_samples


def posterior_mean(fit_: EbmrFit, data: NoisyMatrix, n_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Default posterior-mean estimator (Rao-Blackwellized, seeded)."""
    return rao_blackwell_posterior_mean(fit_, data, n_samples, make_rng(seed, _STREAM_POSTERIOR))
