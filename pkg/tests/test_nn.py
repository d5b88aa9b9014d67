import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autorl_bench import nn
from autorl_bench.nn import MLPParams


def _random_net(rng, head, sizes=(3, 5, 4, 2), activation="tanh"):
    return nn.init_mlp(rng, list(sizes), activation=activation, head=head,
                       hidden_gain=1.0, out_gain=1.0, log_std_init=0.3)


def _perturb_biases(rng, net):
    # zero biases would leave bias gradients untested at a symmetric point
    return net.with_arrays({k: (v + 0.1 * rng.standard_normal(v.shape)) for k, v in net.arrays().items()})


def fd_check(net, x, w, h=1e-5):
    """Central finite differences of loss = sum(w * forward(net, x))."""
    tape = nn.Tape()
    out = nn.forward(net, x, tape)
    grads, gx = nn.backward(net, tape, w)
    analytic = dict(grads.arrays())
    worst = 0.0
    for name, arr in net.arrays().items():
        for idx in np.ndindex(arr.shape):
            plus = {k: v.copy() for k, v in net.arrays().items()}
            minus = {k: v.copy() for k, v in net.arrays().items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            lp = np.sum(w * nn.forward(net.with_arrays(plus), x))
            lm = np.sum(w * nn.forward(net.with_arrays(minus), x))
            num = (lp - lm) / (2 * h)
            ana = analytic[name][idx]
            worst = max(worst, abs(num - ana) / max(1.0, abs(num), abs(ana)))
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (np.sum(w * nn.forward(net, xp)) - np.sum(w * nn.forward(net, xm))) / (2 * h)
        worst = max(worst, abs(num - gx[idx]) / max(1.0, abs(num), abs(gx[idx])))
    return worst


def test_zero_network_outputs_zero():
    net = MLPParams([np.zeros((4, 3)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)])
    x = np.random.default_rng(0).standard_normal((5, 3))
    assert np.array_equal(nn.forward(net, x), np.zeros((5, 2)))


def test_single_linear_layer():
    net = MLPParams([np.array([[2.0]])], [np.array([1.0])])
    assert nn.forward(net, np.array([[3.0]])).tolist() == [[7.0]]


def test_forward_matches_straight_line_reevaluation():
    rng = np.random.default_rng(1)
    net = _perturb_biases(rng, _random_net(rng, "linear"))
    x = rng.standard_normal((6, 3))
    w0, w1, w2 = net.weights
    b0, b1, b2 = net.biases
    expected = np.zeros((6, 2))
    for r in range(6):
        h1 = [math.tanh(sum(w0[j, k] * x[r, k] for k in range(3)) + b0[j]) for j in range(5)]
        h2 = [math.tanh(sum(w1[j, k] * h1[k] for k in range(5)) + b1[j]) for j in range(4)]
        for j in range(2):
            expected[r, j] = sum(w2[j, k] * h2[k] for k in range(4)) + b2[j]
    np.testing.assert_allclose(nn.forward(net, x), expected, rtol=0, atol=1e-12)


def test_forward_shape_error_names_layer():
    rng = np.random.default_rng(2)
    net = _random_net(rng, "linear")
    with pytest.raises(nn.ShapeError, match="layer 0"):
        nn.forward(net, np.zeros((2, 4)))


def test_scalar_gradient():
    net = MLPParams([np.array([[0.7]])], [np.array([0.0])])
    tape = nn.Tape()
    nn.forward(net, np.array([[3.0]]), tape)
    grads, _ = nn.backward(net, tape, np.ones((1, 1)))
    assert grads.weights[0][0, 0] == 3.0


def test_zero_loss_grad_gives_zero_gradients():
    rng = np.random.default_rng(3)
    net = _random_net(rng, "gaussian")
    tape = nn.Tape()
    out = nn.forward(net, rng.standard_normal((4, 3)), tape)
    grads, gx = nn.backward(net, tape, np.zeros_like(out))
    assert all(not np.any(a) for _, a in nn.tree_leaves(grads))
    assert not np.any(gx)


def test_backward_before_forward_is_usage_error():
    rng = np.random.default_rng(4)
    net = _random_net(rng, "linear")
    with pytest.raises(nn.UsageError):
        nn.backward(net, nn.Tape(), np.zeros((1, 2)))


@pytest.mark.parametrize("head", ["linear", "categorical", "gaussian"])
@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_gradients_match_finite_differences(head, activation):
    rng = np.random.default_rng(5)
    for _ in range(3):
        net = _perturb_biases(rng, _random_net(rng, head, activation=activation))
        x = rng.standard_normal((4, 3))
        out = nn.forward(net, x)
        w = rng.standard_normal(out.shape)
        assert fd_check(net, x, w) < 1e-6


def test_adam_zero_gradient_leaves_params():
    rng = np.random.default_rng(6)
    net = _random_net(rng, "linear")
    state = nn.adam_init(net, lr=0.1)
    new, state2 = nn.adam_update(net, net.zeros_like(), state)
    for (_, a), (_, b) in zip(nn.tree_leaves(net), nn.tree_leaves(new)):
        assert np.array_equal(a, b)
    assert state2.t == 1


def test_adam_single_step_closed_form():
    p = np.array([1.0])
    state = nn.adam_init(p, lr=0.1)
    new, state = nn.adam_update(p, np.array([1.0]), state)
    # m_hat = 1, v_hat = 1 -> step = 0.1 / (1 + 1e-8)
    assert new[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
    assert state.t == 1


def test_adam_deterministic():
    rng = np.random.default_rng(7)
    net = _random_net(rng, "linear")
    g = net.with_arrays({k: rng.standard_normal(v.shape) for k, v in net.arrays().items()})
    a, _ = nn.adam_update(net, g, nn.adam_init(net))
    b, _ = nn.adam_update(net.copy(), g, nn.adam_init(net))
    for (_, x), (_, y) in zip(nn.tree_leaves(a), nn.tree_leaves(b)):
        assert np.array_equal(x, y)


def test_adam_non_finite_gradient_reports_path():
    params = {"actor": np.zeros(2), "critic": np.zeros(3)}
    grads = {"actor": np.zeros(2), "critic": np.array([0.0, np.nan, 0.0])}
    with pytest.raises(nn.NonFiniteGradient, match="ppo.critic"):
        nn.adam_update(params, grads, nn.adam_init(params), name="ppo")


def test_clip_grad_norm_examples():
    g = np.array([0.3, 0.4])
    assert nn.clip_grad_norm(g, 1.0) is g
    np.testing.assert_allclose(nn.clip_grad_norm(np.array([3.0, 4.0]), 1.0), [0.6, 0.8], atol=1e-15)
    assert not np.any(nn.clip_grad_norm(np.array([3.0, 4.0]), 0.0))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=8),
    st.floats(0.0, 10.0),
)
def test_clip_grad_norm_properties(values, max_norm):
    # covers magnitudes whose squares underflow
    g = np.array(values)
    once = nn.clip_grad_norm(g, max_norm)
    assert nn.global_norm(once) <= max_norm + 1e-12 * max(1.0, max_norm)
    assert np.array_equal(nn.clip_grad_norm(once, max_norm), once)
    if nn.global_norm(g) > 0 and nn.global_norm(once) > 0:
        u, v = g / np.max(np.abs(g)), once / np.max(np.abs(once))
        cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        assert cos == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_init_is_orthogonal():
    rng = np.random.default_rng(8)
    w = nn.orthogonal(rng, (64, 4), math.sqrt(2))
    np.testing.assert_allclose(w.T @ w, 2.0 * np.eye(4), atol=1e-12)
    w = nn.orthogonal(rng, (2, 64), 0.01)
    np.testing.assert_allclose(w @ w.T, 1e-4 * np.eye(2), atol=1e-16)
