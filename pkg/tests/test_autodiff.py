"""Tape engine and dense-network derivative checks against finite differences."""

import numpy as np
import pytest

from pionlab import tape
from pionlab.errors import ConfigError, ContractError
from pionlab.network import (DenseNetwork, Layer, forward, init_dense,
                             input_derivatives, load_layers, param_gradient,
                             save_layers)

from _oracles import directional_fd, fd_derivs, mlp_reference, rel_err


# ---------------------------------------------------------------------------
# tape primitives


def test_tape_elementwise_and_reductions():
    rng = np.random.default_rng(0)
    a_val, b_val = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    a, b = tape.leaf(a_val), tape.leaf(b_val)
    out = ((a * b + 2.0 * a - b) ** 2).mean()
    tape.backward(out)
    # d/da mean((ab + 2a - b)^2) = 2 (ab + 2a - b)(b + 2) / N
    inner = a_val * b_val + 2 * a_val - b_val
    assert np.allclose(a.grad, 2 * inner * (b_val + 2) / inner.size)
    assert np.allclose(b.grad, 2 * inner * (a_val - 1) / inner.size)


def test_tape_broadcast_unbroadcast():
    a = tape.leaf(np.ones((5, 3)))
    b = tape.leaf(np.arange(3.0))
    out = (a * b).sum()
    tape.backward(out)
    assert np.allclose(b.grad, 5.0 * np.ones(3) * 1.0 * np.arange(3.0) / np.maximum(np.arange(3.0), 1e-300) * 0 + 5.0)
    assert b.grad.shape == (3,)


def test_tape_linear_matches_manual():
    rng = np.random.default_rng(1)
    W = tape.leaf(rng.normal(size=(4, 6)))
    b = tape.leaf(rng.normal(size=4))
    x = rng.normal(size=(7, 6))
    out = tape.linear(x, W, b).sum()
    tape.backward(out)
    assert np.allclose(W.grad, np.ones((7, 4)).T @ x)
    assert np.allclose(b.grad, 7.0 * np.ones(4))


def test_tape_sum_axis_grad():
    v = tape.leaf(np.arange(12.0).reshape(3, 4))
    out = (v.sum(axis=1) ** 2).sum()
    tape.backward(out)
    rows = np.arange(12.0).reshape(3, 4).sum(axis=1)
    assert np.allclose(v.grad, np.repeat(2 * rows, 4).reshape(3, 4))


# ---------------------------------------------------------------------------
# forward evaluation


def test_forward_zero_weight_bias_only():
    net = DenseNetwork([Layer(np.zeros((1, 1)), np.array([3.0]))])
    for x in (-2.0, 0.0, 5.5):
        assert forward(net, np.array([x])) == pytest.approx(3.0)


def test_forward_single_hidden_tanh_origin():
    net = DenseNetwork([Layer(np.array([[1.0]]), np.array([0.0])),
                        Layer(np.array([[1.0]]), np.array([0.0]))])
    assert forward(net, np.array([0.0]))[0] == 0.0


def test_forward_matches_reference_oracle():
    net = init_dense([4, 16, 16, 16, 2], seed=11)
    rng = np.random.default_rng(3)
    x = rng.normal(size=4)
    ref = mlp_reference([(l.W, l.b) for l in net.layers], x)
    assert rel_err(forward(net, x), ref) < 1e-14


def test_forward_dimension_mismatch():
    net = init_dense([4, 8, 1], seed=0)
    with pytest.raises(ConfigError):
        forward(net, np.zeros(5))


def test_forward_deterministic_bitwise():
    net = init_dense([3, 16, 16, 1], seed=5)
    x = np.array([0.1, -0.2, 0.3])
    a, b = forward(net, x), forward(net, x)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# input derivatives


def test_tanh_unit_net_maclaurin():
    # f(x) = tanh(x): at 0 the series x - x^3/3 gives d1=1, d2=0, d3=-2
    net = DenseNetwork([Layer(np.array([[1.0]]), np.array([0.0])),
                        Layer(np.array([[1.0]]), np.array([0.0]))])
    jet = input_derivatives(net, np.array([0.0]), coord=0, order=3)
    assert jet.value[0] == pytest.approx(0.0, abs=1e-15)
    assert jet.d1[0] == pytest.approx(1.0)
    assert jet.d2[0] == pytest.approx(0.0, abs=1e-15)
    assert jet.d3[0] == pytest.approx(-2.0)


def test_affine_net_derivatives():
    net = DenseNetwork([Layer(np.array([[2.0]]), np.array([1.0]))])
    jet = input_derivatives(net, np.array([0.7]), coord=0, order=3)
    assert jet.value[0] == pytest.approx(2 * 0.7 + 1)
    assert jet.d1[0] == pytest.approx(2.0)
    assert jet.d2[0] == 0.0 and jet.d3[0] == 0.0


def test_input_derivatives_match_fd():
    for seed in range(5):
        net = init_dense([2, 16, 16, 16, 1], seed=seed)
        base = np.array([0.3, -0.1])
        for coord in (0, 1):
            def f(s):
                x = base.copy()
                x[coord] = s
                return forward(net, x)
            d1, d2, d3 = fd_derivs(f, base[coord])
            jet = input_derivatives(net, base, coord=coord, order=3)
            assert rel_err(jet.d1, d1) < 1e-5
            assert rel_err(jet.d2, d2) < 1e-5
            assert rel_err(jet.d3, d3) < 1e-5


def test_order_validation():
    net = init_dense([2, 4, 1], seed=0)
    with pytest.raises(ContractError):
        input_derivatives(net, np.zeros(2), coord=0, order=4)
    with pytest.raises(ContractError):
        input_derivatives(net, np.zeros(2), coord=5, order=1)


def test_jet_consistency_order1_vs_order3():
    net = init_dense([3, 16, 16, 1], seed=9)
    x = np.array([0.4, 0.2, -0.6])
    j1 = input_derivatives(net, x, coord=1, order=1)
    j3 = input_derivatives(net, x, coord=1, order=3)
    assert np.array_equal(j1.d1, j3.d1)
    assert np.array_equal(j1.value, j3.value)


def test_chain_rule_tanh_affine_composition():
    # g(f(x)) with f affine and g = tanh: closed-form derivatives
    a, b = 1.7, -0.3
    net = DenseNetwork([Layer(np.array([[a]]), np.array([b])),
                        Layer(np.array([[1.0]]), np.array([0.0]))])
    x0 = 0.25
    jet = input_derivatives(net, np.array([x0]), coord=0, order=3)
    z = a * x0 + b
    y = np.tanh(z)
    u1 = 1 - y**2
    assert jet.d1[0] == pytest.approx(u1 * a, rel=1e-14)
    assert jet.d2[0] == pytest.approx(-2 * y * u1 * a**2, rel=1e-13)
    assert jet.d3[0] == pytest.approx((-2 * u1**2 + 4 * y**2 * u1) * a**3, rel=1e-13)


# ---------------------------------------------------------------------------
# parameter gradients


def _flatten(layers):
    return np.concatenate([np.concatenate([l.W.ravel(), l.b.ravel()])
                           for l in layers])


def _unflatten_like(net, theta):
    layers, i = [], 0
    for lay in net.layers:
        nw = lay.W.size
        W = theta[i:i + nw].reshape(lay.W.shape)
        i += nw
        b = theta[i:i + lay.b.size]
        i += lay.b.size
        layers.append(Layer(W, b))
    return DenseNetwork(layers)


def test_param_gradient_quadratic_bias():
    net = DenseNetwork([Layer(np.zeros((1, 1)), np.array([3.0]))])

    def loss(taped):
        return (taped.layers[0].b ** 2).sum()

    g = param_gradient(loss, net)
    assert g[0].b[0] == pytest.approx(6.0)
    assert np.all(g[0].W == 0.0)


def test_param_gradient_unused_parameter_zero():
    net = init_dense([2, 4, 1], seed=1)

    def loss(taped):
        # touches only the output bias
        return (taped.layers[-1].b ** 2).sum()

    g = param_gradient(loss, net)
    assert np.all(g[0].W == 0.0)
    assert np.all(g[1].W == 0.0)
    assert np.all(g[0].b == 0.0)


def test_param_gradient_matches_directional_fd():
    from pionlab.network import mlp_channels, Channels
    rng = np.random.default_rng(4)
    X = rng.normal(size=(8, 3))
    for seed in range(5):
        net = init_dense([3, 12, 12, 1], seed=seed)

        def loss_np(theta):
            out = np.array([forward(_unflatten_like(net, theta), x) for x in X])
            return float((out ** 2).mean())

        def loss_taped(taped):
            out = mlp_channels(taped.layers, Channels(val=X))
            return (out.val ** 2).mean()

        g = param_gradient(loss_taped, net)
        gflat = _flatten(g)
        theta = _flatten(net.layers)
        v = rng.normal(size=theta.size)
        v /= np.linalg.norm(v)
        fd = directional_fd(loss_np, theta, v)
        assert abs(gflat @ v - fd) / max(abs(fd), 1e-9) < 1e-6


def test_param_gradient_nonfinite_loss_raises():
    from pionlab.errors import TrainingDivergenceError
    net = init_dense([1, 2, 1], seed=0)

    def loss(taped):
        return (taped.layers[0].W * np.inf).sum()

    with pytest.raises(TrainingDivergenceError):
        param_gradient(loss, net)


# ---------------------------------------------------------------------------
# checkpoint round trip


def test_checkpoint_roundtrip(tmp_path):
    net = init_dense([5, 8, 8, 2], seed=42)
    path = tmp_path / "params.opn"
    save_layers(path, net.layers)
    loaded = load_layers(path)
    assert len(loaded) == len(net.layers)
    for a, b in zip(net.layers, loaded):
        assert np.array_equal(a.W, b.W)
        assert np.array_equal(a.b, b.b)
    # documented layout: magic + u32 count, then u32 dims and f64 payloads
    raw = path.read_bytes()
    assert raw[:4] == b"OPN1"
    assert int.from_bytes(raw[4:8], "little") == 3


def test_checkpoint_rejects_other_files(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOPE." * 10)
    with pytest.raises(ConfigError):
        load_layers(p)
