import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auwgcn import numerics as nx
from auwgcn import reference as ref
from auwgcn.numerics import AdamState, Parameter


def fd_error(loss, params, eps=1e-5):
    return nx.finite_diff_check(loss, params, eps=eps)


def test_matmul_identity_and_hand_example():
    a = np.arange(6, dtype=np.float64).reshape(2, 3)
    assert np.array_equal(nx.matmul(a, np.eye(3)), a)
    out = nx.matmul(np.array([[1.0, 2], [3, 4]]), np.array([[5.0], [6]]))
    assert out.tolist() == [[17.0], [39.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        nx.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_keeps_float32_storage():
    a = np.ones((3, 4), dtype=np.float32)
    assert nx.matmul(a, a.T).dtype == np.float32


@pytest.mark.parametrize("seed", range(5))
def test_matmul_grads_fd(seed):
    rng = np.random.default_rng(seed)
    a, b = Parameter(rng.normal(size=(5, 4))), Parameter(rng.normal(size=(4, 3)))
    r = rng.normal(size=(5, 3))
    da, db = nx.matmul_backward(a.value, b.value, r)
    a.grad[...], b.grad[...] = da, db
    assert fd_error(lambda: float((nx.matmul(a.value, b.value) * r).sum()), [a, b]) < 1e-3


def test_relu_examples():
    assert np.array_equal(nx.relu(np.zeros(4)), np.zeros(4))
    assert nx.relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
    assert nx.relu_backward(np.array([-1.0, 2.0]), np.array([5.0, 5.0])).tolist() == [0.0, 5.0]


def test_sigmoid_softmax_examples():
    assert nx.sigmoid(np.array([0.0]))[0] == 0.5
    assert np.allclose(nx.softmax(np.full((4, 3), 7.0)), 0.25)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_softmax_stable_columns_sum_to_one(seed):
    x = np.random.default_rng(seed).uniform(-50, 50, size=(4, 9))
    y = nx.softmax(x, axis=0)
    assert np.all(np.isfinite(y))
    assert np.allclose(y.sum(axis=0), 1.0, atol=1e-6)


def test_sigmoid_extremes_finite():
    y = nx.sigmoid(np.array([-1000.0, 1000.0]))
    assert y.tolist() == [0.0, 1.0]


def test_softmax_cross_entropy_gradient_is_p_minus_y():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(4, 6))
    c = rng.integers(0, 4, size=6)
    y = np.eye(4)[:, c]
    p = nx.softmax(z)
    # d/dz of -Σ log p_c through the softmax backward
    dz = nx.softmax_backward(p, -y / p)
    assert np.allclose(dz, p - y, atol=1e-12)


def test_conv1d_identity_and_hand_example():
    x = np.random.default_rng(0).normal(size=(3, 7))
    w = np.eye(3)[:, :, None]
    assert np.allclose(nx.conv1d(x, w, np.zeros(3)), x)
    out = nx.conv1d(np.array([[1.0, 2, 3, 4]]), np.ones((1, 1, 3)), np.zeros(1))
    assert out.tolist() == [[3.0, 6.0, 9.0, 7.0]]


def test_conv1d_rejects_bad_kernel_and_dilation():
    with pytest.raises(ValueError):
        nx.conv1d(np.zeros((1, 5)), np.zeros((1, 1, 2)), np.zeros(1))
    with pytest.raises(ValueError):
        nx.conv1d(np.zeros((1, 5)), np.zeros((1, 1, 3)), np.zeros(1), dilation=0)


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 4), st.integers(1, 4), st.integers(1, 15),
    st.sampled_from([1, 3, 5]), st.integers(1, 3), st.integers(0, 2**32 - 1),
)
def test_conv1d_matches_loop_reference(c_in, c_out, t, k, d, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(c_in, t)), rng.normal(size=(c_out, c_in, k)), rng.normal(size=c_out)
    assert np.allclose(nx.conv1d(x, w, b, d), ref.conv1d(x, w, b, d))


@pytest.mark.parametrize("seed", range(5))
def test_conv1d_grads_fd(seed):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(3, 11)))
    w = Parameter(rng.normal(size=(2, 3, 3)))
    b = Parameter(rng.normal(size=2))
    r = rng.normal(size=(2, 11))
    dx, dw, db = nx.conv1d_backward(x.value, w.value, 2, r)
    x.grad[...], w.grad[...], b.grad[...] = dx, dw, db
    assert fd_error(lambda: float((nx.conv1d(x.value, w.value, b.value, 2) * r).sum()), [x, w, b]) < 1e-3


@pytest.mark.parametrize("k,d", [(3, 1), (3, 2), (5, 3)])
def test_conv1d_receptive_radius(k, d):
    rng = np.random.default_rng(0)
    w, b = rng.normal(size=(2, 1, k)) + 2.0, np.zeros(2)
    t, t0 = 25, 12
    x = np.zeros((1, t))
    x[0, t0] = 1.0
    changed = np.flatnonzero(np.any(nx.conv1d(x, w, b, d) != 0, axis=0))
    radius = (k - 1) // 2 * d
    # a single dilated layer touches only every d-th frame inside the radius
    assert changed.tolist() == list(range(t0 - radius, t0 + radius + 1, d))


def test_adam_zero_grad_leaves_param():
    p = Parameter(np.array([1.0, -2.0]))
    nx.adam_step(p, AdamState.for_param(p), lr=0.01)
    assert p.value.tolist() == [1.0, -2.0]


def test_adam_first_step_closed_form():
    p = Parameter(np.array([1.0]))
    p.grad[...] = 2.0
    s = AdamState.for_param(p)
    nx.adam_step(p, s, lr=0.01)
    # after bias correction m_hat = g and sqrt(v_hat) = |g|
    assert p.value[0] == pytest.approx(1 - 0.01 * 2 / (2 + 1e-8), abs=1e-12)
    assert s.t == 1 and p.grad[0] == 0.0


@given(st.floats(-5, 5).filter(lambda g: abs(g) > 1e-3))
def test_adam_moves_against_gradient(g):
    p = Parameter(np.array([0.0]))
    s = AdamState.for_param(p)
    trace = [0.0]
    for _ in range(2):
        p.grad[...] = g
        nx.adam_step(p, s, lr=0.1)
        trace.append(float(p.value[0]))
    steps = np.diff(trace)
    assert np.all(np.sign(steps) == -np.sign(g))
    assert np.all(s.v >= 0)


def test_finite_diff_linear_and_quadratic():
    p = Parameter(np.ones(6))
    p.grad[...] = 1.0
    assert nx.finite_diff_check(lambda: float(p.value.sum()), [p], eps=1e-3) <= 1e-6
    p.grad[...] = 2 * p.value
    assert nx.finite_diff_check(lambda: float((p.value**2).sum()), [p], eps=1e-3) <= 1e-5


def test_finite_diff_detects_wrong_gradient():
    p = Parameter(np.ones(3))
    p.grad[...] = 3.0  # true gradient of Σθ² at 1 is 2
    assert nx.finite_diff_check(lambda: float((p.value**2).sum()), [p]) > 0.3


def test_finite_diff_restores_values():
    p = Parameter(np.linspace(-1, 1, 5))
    before = p.value.copy()
    nx.finite_diff_check(lambda: float(np.sin(p.value).sum()), [p])
    assert np.array_equal(p.value, before)


def test_check_finite():
    nx.check_finite(np.ones(3))
    with pytest.raises(nx.NonFiniteError):
        nx.check_finite(np.array([1.0, np.nan]))


def test_parameter_shape_invariant():
    with pytest.raises(ValueError):
        Parameter(np.zeros(3), np.zeros(4))
