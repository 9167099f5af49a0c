import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soco.numerics import (
    AdamState,
    Mlp,
    NonFiniteError,
    ShapeError,
    adam_step,
    finite_diff_grad,
    max_relative_error,
    mlp_backward,
    mlp_forward,
    param_count,
)


def unit_net(output="identity"):
    net = Mlp([1, 1, 1, 1], output=output)
    for w in net.weights:
        w[...] = 1.0
    return net


def test_hand_traced_forward():
    net = unit_net()
    assert net.forward(np.array([[2.0]]))[0, 0] == 2.0
    assert net.forward(np.array([[-3.0]]))[0, 0] == 0.0


def test_zero_network_outputs_zero():
    net = Mlp([5, 7, 7, 3])
    out = net.forward(np.random.default_rng(0).normal(size=(4, 5)))
    assert np.array_equal(out, np.zeros((4, 3)))


def test_params_are_views_into_flat():
    net = Mlp([3, 4, 4, 2], rng=np.random.default_rng(1))
    assert net.n_params == param_count([3, 4, 4, 2]) == 3 * 4 + 4 + 4 * 4 + 4 + 4 * 2 + 2
    net.flat[:] = 0.5
    assert np.all(net.weights[1] == 0.5) and np.all(net.biases[2] == 0.5)


def test_shape_and_finiteness_errors():
    net = Mlp([3, 4, 4, 2], rng=np.random.default_rng(1))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 4)))
    with pytest.raises(NonFiniteError):
        net.forward(np.array([[0.0, np.nan, 1.0]]))
    with pytest.raises(ShapeError):
        Mlp([3, 4, 2])
    out, cache = net.forward_train(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        net.backward(cache, np.zeros((2, 3)))
    with pytest.raises(RuntimeError):
        net.backward(None, out)


def test_zero_upstream_gives_zero_grads():
    net = Mlp([3, 4, 4, 2], rng=np.random.default_rng(2))
    out, cache = mlp_forward(net, np.ones((2, 3)), train=True)
    g, gin = mlp_backward(net, cache, np.zeros_like(out))
    assert not g.any() and not gin.any()


def test_identity_net_square_loss_input_grad():
    net = unit_net()
    out, cache = net.forward_train(np.array([[3.0]]))
    _, gin = net.backward(cache, 2.0 * out)
    assert gin[0, 0] == 6.0


def test_seeded_init_is_deterministic():
    a = Mlp([4, 8, 8, 2], rng=np.random.default_rng(11))
    b = Mlp([4, 8, 8, 2], rng=np.random.default_rng(11))
    assert a.flat.tobytes() == b.flat.tobytes()
    x = np.random.default_rng(3).normal(size=(5, 4))
    assert a.forward(x).tobytes() == b.forward(x).tobytes()
    bound = 1 / np.sqrt(4)
    assert np.all(np.abs(a.weights[0]) <= bound) and not a.biases[0].any()


@pytest.mark.parametrize("output", ["identity", "tanh"])
def test_backward_matches_finite_differences(output):
    rng = np.random.default_rng(5)
    net = Mlp([4, 8, 8, 2], output=output, rng=rng)
    x = rng.normal(size=(3, 4))
    up = rng.normal(size=(3, 2))
    out, cache = net.forward_train(x)
    g, gin = net.backward(cache, up)
    base = net.flat.copy()

    def f_params(p):
        net.flat[...] = p
        return float(np.sum(up * net.forward(x)))

    num = finite_diff_grad(f_params, base)
    net.flat[...] = base
    assert max_relative_error(g, num) < 1e-4
    num_x = finite_diff_grad(lambda z: float(np.sum(up * net.forward(z))), x)
    assert max_relative_error(gin, num_x) < 1e-4


def test_adam_first_step_closed_form():
    for g, expected in ((1.0, -1e-3 / (1 + 1e-8)), (-1.0, 1e-3 / (1 + 1e-8))):
        p = np.zeros(1)
        st_ = AdamState(1e-3, 1)
        adam_step(p, np.array([g]), st_)
        assert abs(p[0] - expected) < 1e-12
        assert st_.t == 1
    assert abs(-1e-3 / (1 + 1e-8) - (-9.99999990e-4)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False).filter(lambda g: abs(g) > 1e-3))
def test_adam_step_one_is_sign_times_lr(g):
    p = np.array([0.25])
    adam_step(p, np.array([g]), AdamState(1e-3, 1))
    assert abs(p[0] - (0.25 - 1e-3 * g / (abs(g) + 1e-8))) < 1e-12


def test_adam_zero_gradient_and_errors():
    p = np.array([1.0, 2.0])
    s = AdamState(1e-3, 2)
    adam_step(p, np.zeros(2), s)
    assert np.array_equal(p, [1.0, 2.0]) and not s.m.any() and not s.v.any()
    with pytest.raises(NonFiniteError):
        adam_step(p, np.array([np.inf, 0.0]), s)
    with pytest.raises(ShapeError):
        adam_step(p, np.zeros(3), s)


def test_finite_diff_examples():
    assert abs(finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]))[0] - 6.0) < 1e-6
    assert not finite_diff_grad(lambda x: 4.2, np.array([1.0, -2.0])).any()
    g = finite_diff_grad(lambda v: float(v[0] * v[1]), np.array([2.0, 5.0]))
    assert np.allclose(g, [5.0, 2.0], atol=1e-6)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.zeros(1), h=0.0)
    with pytest.raises(NonFiniteError):
        finite_diff_grad(lambda x: float("nan"), np.zeros(1))
