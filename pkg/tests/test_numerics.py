import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealgan.errors import NonFiniteError, ShapeError, UsageError
from annealgan.numerics import (
    NetParams,
    OptimizerState,
    Rng,
    Tape,
    backward,
    forward,
    grad_check,
    init_net,
    optimizer_step,
    predict,
)
from annealgan.numerics import tape as T


def linear_net(W, b):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    net = NetParams((W.shape[0], W.shape[1]), "tanh")
    net.layers[0][0][...] = W
    net.layers[0][1][...] = b
    return net


# --- forward -----------------------------------------------------------------


def test_single_affine_layer():
    net = linear_net([[2.0]], [1.0])
    assert predict(net, np.array([[3.0]])).tolist() == [[7.0]]


def test_zero_weight_net_returns_bias():
    net = NetParams((3, 5, 2), "tanh")
    net.layers[-1][1][...] = [0.25, -1.5]
    out = predict(net, Rng(0).normal((4, 3)))
    assert np.array_equal(out, np.tile([0.25, -1.5], (4, 1)))


def test_output_shape_contract():
    net = init_net((2, 16, 16, 1), Rng(1))
    assert predict(net, Rng(2).normal((8, 2))).shape == (8, 1)


def test_shape_mismatch_names_layer():
    net = init_net((2, 4, 1), Rng(0))
    with pytest.raises(ShapeError, match="layer 0"):
        forward(net, np.zeros((3, 5)), Tape())


# --- backward ----------------------------------------------------------------


def test_linear_input_gradient_is_weight_row():
    a = np.array([0.5, -2.0, 3.0])
    net = linear_net(a[:, None], [0.7])
    tape = Tape()
    y = forward(net, Rng(0).normal((6, 3)), tape)
    g = backward(tape, np.ones_like(y.value))
    assert np.array_equal(g.input, np.tile(a, (6, 1)))


def test_zero_seed_gives_zero_gradients():
    net = init_net((2, 8, 1), Rng(3), "tanh")
    tape = Tape()
    forward(net, Rng(4).normal((5, 2)), tape)
    params, inp = backward(tape, 0.0)
    assert all(not p.any() for p in params)
    assert not inp.any()


def test_backward_before_forward_is_usage_error():
    with pytest.raises(UsageError):
        backward(Tape(), 1.0)


def _central_input_grad(net, x, h=1e-5):
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (predict(net, up).sum() - predict(net, dn).sum()) / (2 * h)
    return num


def test_tanh_input_gradient_matches_finite_differences():
    net = init_net((2, 8, 1), Rng(5), "tanh")
    x = Rng(6).normal((7, 2))
    tape = Tape()
    y = forward(net, x, tape)
    g = backward(tape, np.ones_like(y.value)).input
    num = _central_input_grad(net, x)
    rel = np.abs(g - num) / np.maximum(np.abs(num), 1e-3)
    assert rel.max() < 1e-4


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "softplus", "leaky_relu", "exp", "log", "square"])
def test_primitive_gradients_on_random_probes(name):
    fn = getattr(T, name)
    rng = Rng(11).split(name)
    worst = 0.0
    for _ in range(100):
        x0 = rng.normal((3,))
        if name == "log":
            x0 = np.abs(x0) + 0.5
        if name == "leaky_relu":
            x0 = x0 + np.sign(x0) * 0.01  # stay off the kink
        tape = Tape()
        v = tape.leaf(x0)
        out = T.sum(fn(v))
        g = tape.adjoints(out, 1.0)[v.index]
        h = 1e-6
        num = np.array([
            (fn(Tape().leaf(x0 + h * e)).value.sum() - fn(Tape().leaf(x0 - h * e)).value.sum()) / (2 * h)
            for e in np.eye(3)
        ])
        worst = max(worst, float((np.abs(g - num) / np.maximum(np.abs(num), 1e-3)).max()))
    assert worst < 1e-4


def test_binary_primitives_and_broadcast():
    tape = Tape()
    a = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = tape.leaf(np.array([0.5, -1.0]))
    out = T.sum(T.mul(T.sub(T.add(a, b), 1.0), b))
    adj = tape.adjoints(out, 1.0)
    assert np.allclose(adj[a.index], np.tile([0.5, -1.0], (2, 1)))
    # d/db sum((a + b - 1) * b) = sum_rows(a + 2b - 1)
    assert np.allclose(adj[b.index], (a.value + 2 * b.value - 1).sum(axis=0))


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_backward_is_linear_in_seed(alpha, beta, seed):
    rng = Rng(seed)
    net = init_net((3, 6, 2), rng, "tanh")
    x = rng.normal((4, 3))
    u, v = rng.normal((4, 2)), rng.normal((4, 2))

    def grads(s):
        tape = Tape()
        forward(net, x, tape)
        g = backward(tape, s)
        return np.concatenate([g.flat(net), g.input.ravel()])

    lhs = grads(alpha * u + beta * v)
    rhs = alpha * grads(u) + beta * grads(v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))


def test_composed_networks_sum_param_gradients():
    rng = Rng(9)
    net = init_net((2, 5, 2), rng, "tanh")
    x = rng.normal((3, 2))
    tape = Tape()
    h = forward(net, x, tape)
    y = forward(net, h, tape)
    g = backward(tape, 1.0, output=T.sum(y))

    def f(flat):
        n = net.with_flat(flat)
        return predict(n, predict(n, x)).sum()

    num = np.array([(f(net.flat + 1e-6 * e) - f(net.flat - 1e-6 * e)) / 2e-6 for e in np.eye(net.flat.size)])
    assert np.allclose(g.flat(net), num, atol=1e-7)


# --- optimizer ---------------------------------------------------------------


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_leaves_params(kind):
    net = init_net((2, 3, 1), Rng(0))
    new = optimizer_step(net, np.zeros_like(net.flat), OptimizerState(kind, lr=0.1))
    assert np.array_equal(new.flat, net.flat)


def test_sgd_rule():
    net = init_net((2, 3, 1), Rng(0))
    g = Rng(1).normal(net.flat.shape)
    state = OptimizerState("sgd", lr=0.1)
    new = optimizer_step(net, g, state)
    assert np.array_equal(new.flat, net.flat - 0.1 * g)
    assert state.step == 1


def test_adam_first_step_moves_by_rate():
    # with zero moments the bias-corrected first step is lr * g / (|g| + eps)
    net = init_net((2, 3, 1), Rng(0))
    g = Rng(1).normal(net.flat.shape)
    g[::3] = 0.0
    new = optimizer_step(net, g, OptimizerState("adam", lr=1e-3))
    moved = np.abs(new.flat - net.flat)
    assert np.allclose(moved[g != 0], 1e-3, rtol=1e-5)
    assert not moved[g == 0].any()


def test_list_gradients_accepted():
    net = init_net((2, 3, 1), Rng(0))
    grads = [np.ones_like(p) for p in net.params()]
    new = optimizer_step(net, grads, OptimizerState("sgd", lr=1.0))
    assert np.array_equal(new.flat, net.flat - 1.0)


def test_non_finite_gradient_rejected_with_layer():
    net = init_net((2, 3, 1), Rng(0))
    g = np.zeros_like(net.flat)
    g[-1] = np.nan  # bias of the last layer
    state = OptimizerState("adam")
    with pytest.raises(NonFiniteError) as err:
        optimizer_step(net, g, state)
    assert err.value.layer == 1
    assert state.step == 0


def test_misaligned_gradients_rejected():
    net = init_net((2, 3, 1), Rng(0))
    with pytest.raises(ShapeError):
        optimizer_step(net, [np.zeros(3)], OptimizerState("sgd"))


# --- grad_check --------------------------------------------------------------


def test_grad_check_linear_net_is_exact():
    net = init_net((3, 2), Rng(0), "tanh")
    rep = grad_check(net, Rng(1).normal((4, 3)))
    assert rep.max_rel_error < 1e-8 and rep.passed


def test_grad_check_tanh_net():
    net = init_net((2, 16, 1), Rng(2), "tanh")
    rep = grad_check(net, Rng(3).normal((5, 2)))
    assert rep.max_rel_error < 1e-4
    assert rep.n_checked == net.flat.size + 10


def test_grad_check_empty_batch():
    rep = grad_check(init_net((2, 4, 1), Rng(0)), np.zeros((0, 2)))
    assert rep.n_checked == 0 and rep.passed


def test_grad_check_flags_a_wrong_gradient(monkeypatch):
    net = init_net((2, 4, 1), Rng(0), "tanh")
    real = T.tanh

    def broken(x):
        y = np.tanh(x.value)
        return T._unary(x, y, lambda: 1.1 * (1.0 - y * y))

    monkeypatch.setitem(T.ACTIVATIONS, "tanh", broken)
    rep = grad_check(net, Rng(1).normal((3, 2)))
    monkeypatch.setitem(T.ACTIVATIONS, "tanh", real)
    assert not rep.passed and rep.failures


# --- rng ---------------------------------------------------------------------


def test_rng_determinism_and_independence():
    a = Rng(42).split("x", 3).normal((5,))
    b = Rng(42).split("x", 3).normal((5,))
    c = Rng(42).split("x", 4).normal((5,))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_split_does_not_consume_parent_state():
    r1, r2 = Rng(5), Rng(5)
    r1.split("other").normal((100,))
    assert np.array_equal(r1.normal((4,)), r2.normal((4,)))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        Rng(-1)


def test_netparams_dict_roundtrip():
    net = init_net((2, 3, 1), Rng(0))
    back = NetParams.from_dict(net.to_dict())
    assert np.array_equal(back.flat, net.flat) and back.widths == net.widths
