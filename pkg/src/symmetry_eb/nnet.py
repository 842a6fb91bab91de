"""Small feed-forward ReLU network with hand-written backprop and Adam.

The network maps a batch of input rows to one real output per row:
hidden layers are affine followed by ReLU, the last layer is affine.
Weights are stored as ``(fan_in, fan_out)`` matrices so that a layer is
``h @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch

# Networks used by the array models (d_in = 3 unless covariates are present).
SEP_HIDDEN = (5, 5)
CAEB_HIDDEN = (10, 10)
LARGE_HIDDEN = (20, 20)


@dataclass
class GNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatch("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise DimensionMismatch(f"layer {i} fan_in does not chain")
        if self.weights[-1].shape[1] != 1:
            raise DimensionMismatch("output dimension must be 1")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "GNetwork":
        return GNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, inputs) -> np.ndarray:
        return forward(self, inputs)

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GNetwork":
        net = cls(
            [np.asarray(w, dtype=float).reshape(len(w), -1) for w in d["weights"]],
            [np.asarray(b, dtype=float) for b in d["biases"]],
        )
        if "layer_dims" in d and list(d["layer_dims"]) != net.layer_dims:
            raise DimensionMismatch("layer_dims does not match stored weights")
        return net


@dataclass
class NetGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def scaled(self, c: float) -> "NetGrads":
        return NetGrads([c * w for w in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "NetGrads") -> "NetGrads":
        return NetGrads(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def _check_inputs(net: GNetwork, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise DimensionMismatch(f"inputs of shape {x.shape} do not match d_in={net.d_in}")
    return x


def forward(net: GNetwork, inputs) -> np.ndarray:
    h = _check_inputs(net, inputs)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h[:, 0]


def grad_scalar_loss(net: GNetwork, inputs, upstream) -> NetGrads:
    """Gradient of ``sum_b upstream[b] * net(inputs[b])`` w.r.t. all parameters.

    The ReLU derivative at exactly zero is taken to be 0.
    """
    x = _check_inputs(net, inputs)
    g = np.asarray(upstream, dtype=float).reshape(-1)
    if g.shape[0] != x.shape[0]:
        raise DimensionMismatch(f"upstream length {g.shape[0]} != batch size {x.shape[0]}")
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    delta = g[:, None]
    gw: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * len(net.weights)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ net.weights[i].T) * (acts[i] > 0)
    return NetGrads(gw, gb)


def init_network(layer_dims: Sequence[int], rng: np.random.Generator) -> GNetwork:
    """He-style uniform init in ``±sqrt(6 / fan_in)``, zero biases."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims) or dims[-1] != 1:
        raise DimensionMismatch(f"invalid layer_dims {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return GNetwork(weights, biases)


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_update(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """One bias-corrected Adam descent step on a list of arrays.

    Returns new parameter arrays and a new state; inputs are left untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionMismatch("parameter / gradient / moment lists differ in length")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionMismatch(f"shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def adam_step(net: GNetwork, grads: NetGrads, state: AdamState) -> tuple[GNetwork, AdamState]:
    """Adam descent on the network.  Pass negated gradients to ascend."""
    params, state = adam_update(net.parameters(), grads.parameters(), state)
    return GNetwork(params[0::2], params[1::2]), state


def flatten(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in params])


def unflatten_like(vec: np.ndarray, like: GNetwork) -> GNetwork:
    out, pos = [], 0
    for p in like.parameters():
        out.append(vec[pos : pos + p.size].reshape(p.shape).copy())
        pos += p.size
    return GNetwork(out[0::2], out[1::2])
