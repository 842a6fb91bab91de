import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symmetry_eb import nnet
from symmetry_eb.errors import DimensionMismatch
from symmetry_eb.rng import make_rng


def random_net(rng, dims=(3, 5, 5, 1)) -> nnet.GNetwork:
    net = nnet.init_network(dims, rng)
    return nnet.GNetwork(net.weights, [rng.normal(0.0, 0.5, b.shape) for b in net.biases])


def min_abs_preactivation(net, x) -> float:
    h = x
    smallest = np.inf
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = h @ w + b
        smallest = min(smallest, float(np.min(np.abs(h))))
        h = np.maximum(h, 0.0)
    return smallest


def fd_gradient(net, x, upstream, h=1e-5) -> np.ndarray:
    theta = nnet.flatten(net.parameters())
    out = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        fp = upstream @ nnet.forward(nnet.unflatten_like(tp, net), x)
        fm = upstream @ nnet.forward(nnet.unflatten_like(tm, net), x)
        out[k] = (fp - fm) / (2 * h)
    return out


def test_zero_network_outputs_zero():
    net = nnet.GNetwork([np.zeros((3, 4)), np.zeros((4, 1))], [np.zeros(4), np.zeros(1)])
    np.testing.assert_array_equal(net(np.random.default_rng(0).normal(size=(6, 3))), np.zeros(6))


def test_hand_built_relu_doubler():
    net = nnet.GNetwork([np.array([[1.0]]), np.array([[2.0]])], [np.zeros(1), np.zeros(1)])
    assert net([[0.5]])[0] == 1.0
    assert net([[-0.5]])[0] == 0.0


def test_identical_inputs_identical_outputs(rng):
    net = random_net(rng)
    out = net(np.tile(rng.normal(size=3), (2, 1)))
    assert out[0] == out[1]


def test_forward_rejects_wrong_width(rng):
    with pytest.raises(DimensionMismatch):
        random_net(rng)(np.zeros((2, 4)))


def test_zero_upstream_zero_gradient(rng):
    net = random_net(rng)
    g = nnet.grad_scalar_loss(net, rng.normal(size=(7, 3)), np.zeros(7))
    assert all(np.all(p == 0) for p in g.parameters())


def test_linear_net_gradient_is_input():
    net = nnet.GNetwork([np.array([[0.3], [-1.0], [2.0]])], [np.array([0.1])])
    x = np.array([[1.5, -2.0, 0.25]])
    g = nnet.grad_scalar_loss(net, x, [1.0])
    np.testing.assert_array_equal(g.weights[0][:, 0], x[0])
    np.testing.assert_array_equal(g.biases[0], [1.0])


def test_grad_upstream_length_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        nnet.grad_scalar_loss(random_net(rng), np.zeros((3, 3)), np.ones(2))


def test_gradient_matches_finite_differences_20_configs():
    checked = 0
    for trial in range(20):
        rng = make_rng(100, trial)
        net = random_net(rng)
        x = rng.normal(size=(8, 3))
        upstream = rng.normal(size=8)
        if min_abs_preactivation(net, x) < 1e-6:
            continue
        analytic = nnet.flatten(nnet.grad_scalar_loss(net, x, upstream).parameters())
        numeric = fd_gradient(net, x, upstream)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
        assert rel.max() < 1e-4, f"trial {trial}: {rel.max()}"
        checked += 1
    assert checked >= 18


def test_adam_zero_gradient_keeps_parameters(rng):
    net = random_net(rng)
    state = nnet.AdamState.for_params(net.parameters())
    zero = nnet.NetGrads([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])
    new, state2 = nnet.adam_step(net, zero, state)
    assert all(np.array_equal(a, b) for a, b in zip(new.parameters(), net.parameters()))
    assert state2.step_count == state.step_count + 1


def test_adam_constant_gradient_step_tends_to_lr():
    p = [np.array([0.0])]
    state = nnet.AdamState.for_params(p, lr=0.01)
    steps = []
    for _ in range(500):
        new, state = nnet.adam_update(p, [np.array([3.0])], state)
        steps.append(float(new[0][0] - p[0][0]))
        p = new
    assert all(s < 0 for s in steps)
    assert steps[-1] == pytest.approx(-0.01, rel=1e-3)


def test_adam_three_steps_match_hand_recursion():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    grads = [2.0, -1.0, 0.5]
    theta, m, v = 1.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    p = [np.array([1.0])]
    state = nnet.AdamState.for_params(p, lr=lr)
    for g in grads:
        p, state = nnet.adam_update(p, [np.array([g])], state)
    assert p[0][0] == pytest.approx(theta, abs=1e-15)
    assert state.step_count == 3


def test_adam_deterministic(rng):
    net = random_net(rng)
    g = nnet.grad_scalar_loss(net, rng.normal(size=(4, 3)), rng.normal(size=4))
    state = nnet.AdamState.for_params(net.parameters())
    a, _ = nnet.adam_step(net, g, state)
    b, _ = nnet.adam_step(net, g, state)
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))


def test_init_reproducible_and_seed_sensitive():
    a = nnet.init_network([3, 5, 5, 1], make_rng(1))
    b = nnet.init_network([3, 5, 5, 1], make_rng(1))
    c = nnet.init_network([3, 5, 5, 1], make_rng(2))
    assert all(np.array_equal(x, y) for x, y in zip(a.parameters(), b.parameters()))
    assert any(not np.array_equal(x, y) for x, y in zip(a.parameters(), c.parameters()))
    assert all(np.all(bias == 0) for bias in a.biases)


def test_init_fan_in_six_bounds():
    net = nnet.init_network([6, 50, 1], make_rng(0))
    assert np.all(np.abs(net.weights[0]) <= 1.0)


def test_init_rejects_bad_dims():
    with pytest.raises(DimensionMismatch):
        nnet.init_network([3, 5, 2], make_rng(0))


def test_json_round_trip(rng):
    net = random_net(rng)
    back = nnet.GNetwork.from_dict(net.to_dict())
    assert back.layer_dims == [3, 5, 5, 1]
    assert all(np.array_equal(x, y) for x, y in zip(back.parameters(), net.parameters()))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), t=st.floats(0.0, 1.0))
def test_forward_affine_within_linear_region(seed, t):
    rng = np.random.default_rng(seed)
    net = random_net(rng)
    a = rng.normal(size=3)
    b = a + 1e-4 * rng.normal(size=3)

    def pattern(x):
        h, out = x[None, :], []
        for w, bias in zip(net.weights[:-1], net.biases[:-1]):
            h = h @ w + bias
            out.append(h > 0)
            h = np.maximum(h, 0.0)
        return [o.tolist() for o in out]

    if pattern(a) != pattern(b):
        return
    mid = t * a + (1 - t) * b
    if pattern(mid) != pattern(a):
        return
    fa, fb, fm = net(a)[0], net(b)[0], net(mid)[0]
    assert fm == pytest.approx(t * fa + (1 - t) * fb, abs=1e-10)
