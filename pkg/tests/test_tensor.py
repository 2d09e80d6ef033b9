import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skelgen.errors import ConfigurationError, DimensionError, DomainError, UsageError
from skelgen.tensor import (
    Parameter,
    Tensor,
    backward,
    concat,
    conv3d,
    conv3d_transposed,
    cumsum,
    default_dtype,
    exp,
    finite_diff_check,
    getitem,
    grad,
    l2_norm,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    no_grad,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    square,
    sum,
    transpose,
)


@pytest.fixture(autouse=True)
def f64():
    with default_dtype(np.float64):
        yield


def rng(seed=0):
    return np.random.default_rng(seed)


# ---- basic values -----------------------------------------------------------

def test_box_filter_on_constant():
    x = Tensor(np.ones((1, 1, 1, 1, 3)))
    w = Tensor(np.ones((1, 1, 1, 1, 3)))
    y = conv3d(x, w, mask=np.ones((1, 1, 1, 1, 3)), stride=1, padding=(0, 0, 1))
    np.testing.assert_array_equal(y.data.ravel(), [2, 3, 2])


def test_unbatched_input_layout():
    x = Tensor(rng().standard_normal((2, 4, 4, 8)))
    w = Tensor(rng(1).standard_normal((3, 2, 1, 1, 3)))
    y = conv3d(x, w, padding=(0, 0, 1))
    assert y.shape == (3, 4, 4, 8)


def test_zero_mask_annihilates():
    x = Tensor(rng().standard_normal((2, 2, 3, 3, 6)))
    w = Tensor(rng(1).standard_normal((3, 2, 1, 2, 3)), requires_grad=True)
    y = conv3d(x, w, mask=np.zeros(w.shape), padding=(0, 1, 1))
    assert not y.data.any()
    backward(sum(square(y)) + sum(y))
    assert not w.grad.any()


def test_partial_mask_gives_exact_zero_gradient():
    r = rng(3)
    x = Tensor(r.standard_normal((2, 2, 1, 1, 6)))
    w = Tensor(r.standard_normal((3, 2, 1, 1, 3)), requires_grad=True)
    mask = (r.random(w.shape) > 0.5).astype(float)
    backward(sum(square(conv3d(x, w, mask=mask, padding=(0, 0, 1)))))
    assert np.all(w.grad[mask == 0] == 0)
    assert np.any(w.grad[mask == 1] != 0)


def test_sigmoid_zero_and_unit_norm():
    assert sigmoid(Tensor(np.zeros(1))).item() == 0.5
    assert l2_norm(Tensor([0.0, 1.0, 0.0])).item() == 1.0


def test_backward_simple_sums():
    x = Tensor(rng().standard_normal((3, 4)), requires_grad=True)
    backward(sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    x.zero_grad()
    backward(sum(x * x))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_grads_accumulate_until_zeroed():
    x = Tensor(np.arange(3.0), requires_grad=True)
    backward(sum(x))
    backward(sum(x))
    np.testing.assert_array_equal(x.grad, [2, 2, 2])
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(UsageError):
        backward(x * 2.0)


def test_strict_log_domain_and_relaxed_clamp():
    with pytest.raises(DomainError):
        log(Tensor([1.0, 0.0]))
    y = log(Tensor([1.0, 0.0, -3.0]), strict=False)
    np.testing.assert_allclose(y.data, [0.0, np.log(1e-12), np.log(1e-12)])


def test_leaky_relu_slope_gradient():
    x = Tensor([-2.0, -0.5, 0.5, 3.0], requires_grad=True)
    backward(sum(leaky_relu(x, 0.2)))
    np.testing.assert_allclose(x.grad, [0.2, 0.2, 1.0, 1.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.is_leaf


def test_parameter_moments_start_at_zero():
    p = Parameter(np.ones((2, 3)), name="layer.w")
    assert p.requires_grad and p.m.shape == (2, 3) and not p.m.any() and not p.v.any()


# ---- errors -------------------------------------------------------------------

def test_channel_mismatch_names_axes():
    x = Tensor(np.zeros((1, 3, 1, 1, 4)))
    w = Tensor(np.zeros((2, 2, 1, 1, 3)))
    with pytest.raises(DimensionError, match="axis 1"):
        conv3d(x, w)


def test_mask_not_broadcastable():
    x = Tensor(np.zeros((1, 2, 1, 1, 4)))
    w = Tensor(np.zeros((2, 2, 1, 1, 3)))
    with pytest.raises(DimensionError):
        conv3d(x, w, mask=np.ones((3, 2, 1, 1, 3)))


def test_empty_output_is_configuration_error():
    x = Tensor(np.zeros((1, 1, 1, 1, 2)))
    w = Tensor(np.zeros((1, 1, 1, 1, 5)))
    with pytest.raises(ConfigurationError):
        conv3d(x, w)


def test_bad_stride():
    with pytest.raises(ConfigurationError):
        conv3d(Tensor(np.zeros((1, 1, 1, 1, 4))), Tensor(np.zeros((1, 1, 1, 1, 1))), stride=0)


def test_finite_diff_eps_must_be_positive():
    with pytest.raises(UsageError):
        finite_diff_check(lambda t: sum(t), np.ones(3), eps=0)


# ---- oracle --------------------------------------------------------------------

def test_oracle_on_sum_of_squares():
    # central differences are exact for quadratics; a wider step avoids cancellation
    err = finite_diff_check(lambda t: sum(square(t)), rng().standard_normal(10), eps=1e-4)
    assert err < 1e-9


def test_oracle_on_sigmoid_sum():
    assert finite_diff_check(lambda t: sum(sigmoid(t)), rng().standard_normal(10)) < 1e-6


def test_conv_gradients_match_finite_differences():
    r = rng(7)
    X = r.standard_normal((2, 4, 4, 8))
    W = r.standard_normal((3, 2, 1, 1, 3))
    G = r.standard_normal((3, 4, 4, 8))
    assert finite_diff_check(lambda t: sum(conv3d(t, Tensor(W), padding=(0, 0, 1)) * G), X) < 1e-4
    assert finite_diff_check(lambda t: sum(conv3d(Tensor(X), t, padding=(0, 0, 1)) * G), W) < 1e-4


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 0, 2), (2, 1, 3)])
def test_transposed_conv_gradients(stride, pad, k):
    r = rng(11)
    W = r.standard_normal((3, 2, 1, 1, k))
    Y = r.standard_normal((2, 3, 1, 1, 5))
    xs = (1, 1, (5 - 1) * stride - 2 * pad + k)
    G = r.standard_normal((2, 2) + xs)
    st = (1, 1, stride)
    pd = (0, 0, pad)
    assert finite_diff_check(lambda t: sum(conv3d_transposed(t, Tensor(W), stride=st, padding=pd) * G), Y) < 1e-4
    assert finite_diff_check(lambda t: sum(conv3d_transposed(Tensor(Y), t, stride=st, padding=pd) * G), W) < 1e-4


def test_transposed_stride_two_doubles_time():
    y = Tensor(rng().standard_normal((1, 4, 1, 1, 8)))
    w = Tensor(rng(1).standard_normal((4, 3, 1, 1, 2)))
    assert conv3d_transposed(y, w, stride=(1, 1, 2)).shape[-1] == 16
    w3 = Tensor(rng(1).standard_normal((4, 3, 1, 1, 3)))
    assert conv3d_transposed(y, w3, stride=(1, 1, 2), padding=(0, 0, 1), output_padding=(0, 0, 1)).shape[-1] == 16


def test_transposed_zero_in_zero_out():
    w = Tensor(rng().standard_normal((4, 3, 1, 2, 3)))
    out = conv3d_transposed(Tensor(np.zeros((2, 4, 1, 3, 6))), w, padding=(0, 1, 1))
    assert not out.data.any()


PRIMITIVES = {
    "add": (lambda a: sum((a + a[::-1]) * np.arange(1.0, 7.0)), None),
    "sub": (lambda a: sum(square(a - 0.3 * a[::-1])), None),
    "mul": (lambda a: sum(a * a[::-1] * a), None),
    "scalar_mul": (lambda a: sum(square(3.5 * a)), None),
    "div": (lambda a: sum(a / (2.0 + square(a[::-1]))), None),
    "leaky_relu": (lambda a: sum(leaky_relu(a, 0.2, 2 ** 0.5) * np.arange(1.0, 7.0)), "nonzero"),
    "sigmoid": (lambda a: sum(sigmoid(a) * np.arange(1.0, 7.0)), None),
    "log": (lambda a: sum(log(square(a) + 0.5)), None),
    "exp": (lambda a: sum(exp(a * 0.5)), None),
    "square": (lambda a: sum(square(a) * a), None),
    "sqrt": (lambda a: sum(sqrt(square(a) + 1.0)), None),
    "sum_axes": (lambda a: sum(square(sum(reshape(a, (2, 3)), 1))), None),
    "mean_axes": (lambda a: sum(square(mean(reshape(a, (2, 3)), 0))), None),
    "l2_norm": (lambda a: sum(l2_norm(reshape(a, (3, 2)), 1)), None),
    "concat": (lambda a: sum(square(concat([a, a[:2] * 2.0], 0)) * np.arange(1.0, 9.0)), None),
    "slice": (lambda a: sum(square(a[1:5:2])) + sum(a[[0, 0, 3]] * 2.0), None),
    "reshape_transpose": (lambda a: sum(transpose(reshape(a, (2, 3))) * np.arange(6.0).reshape(3, 2)), None),
    "matmul": (lambda a: sum(square(matmul(reshape(a, (2, 3)), reshape(a, (3, 2))))), None),
    "cumsum": (lambda a: sum(square(cumsum(a, 0))), None),
    "softplus": (lambda a: sum(softplus(a) * np.arange(1.0, 7.0)), None),
    "log_softmax": (lambda a: sum(log_softmax(reshape(a, (2, 3)), -1) * np.eye(2, 3)), None),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_at_ten_points(name):
    fn, cond = PRIMITIVES[name]
    r = rng(zlib.crc32(name.encode()))
    for _ in range(10):
        pt = r.standard_normal(6)
        if cond == "nonzero":
            pt = np.where(np.abs(pt) < 1e-3, 0.5, pt)
        assert finite_diff_check(fn, pt) < 1e-4, name


# ---- higher order -------------------------------------------------------------

def test_double_backward_through_conv():
    # d/dw of ||d/dx <conv(x,w), g>||^2, checked numerically
    r = rng(5)
    X = r.standard_normal((1, 2, 1, 1, 6))
    G = r.standard_normal((1, 3, 1, 1, 6))

    def penalty(w):
        x = Tensor(X, requires_grad=True)
        y = leaky_relu(conv3d(x, w, padding=(0, 0, 1)), 0.2)
        gx = grad(sum(y * G), x, create_graph=True)
        return sum(square(gx))

    assert finite_diff_check(penalty, r.standard_normal((3, 2, 1, 1, 3))) < 1e-4


def test_grad_of_intermediate_and_unreachable():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    h = x * 3.0
    y = sum(square(h))
    gh, gu = grad(y, [h, Tensor(np.ones(2), requires_grad=True)])
    np.testing.assert_allclose(gh.data, 2 * h.data)
    assert not gu.data.any()


def test_retain_grad_on_intermediate():
    x = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    h = (x * 2.0).retain_grad()
    backward(sum(square(h)))
    np.testing.assert_allclose(h.grad, 2 * h.data)
    np.testing.assert_allclose(x.grad, 8 * x.data)


# ---- properties -----------------------------------------------------------------

conv_cfg = st.tuples(
    st.integers(1, 2), st.integers(1, 3), st.integers(1, 3),  # B, Cin, Cout
    st.integers(1, 3), st.integers(1, 3),  # kH, kW
    st.integers(1, 2), st.integers(0, 1),  # stride, pad (last axis)
    st.integers(0, 10_000),
)


@settings(max_examples=40, deadline=None)
@given(conv_cfg)
def test_adjoint_identity(cfg):
    B, Ci, Co, kh, kw, s, p = cfg[:7]
    r = rng(cfg[7])
    H, W = kh + 2, kw + 5
    x = r.standard_normal((B, Ci, 2, H, W))
    w = Tensor(r.standard_normal((Co, Ci, 1, kh, kw)))
    y_fwd = conv3d(Tensor(x), w, stride=(1, 1, s), padding=(0, 0, p))
    y = r.standard_normal(y_fwd.shape)
    back = conv3d_transposed(Tensor(y), w, stride=(1, 1, s), padding=(0, 0, p), output_shape=x.shape[2:])
    lhs = float(np.sum(y_fwd.data * y))
    rhs = float(np.sum(x * back.data))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_determinism(seed):
    r = rng(seed)
    x = r.standard_normal((2, 3, 1, 2, 7)).astype(np.float32)
    w = r.standard_normal((4, 3, 1, 2, 3)).astype(np.float32)
    a = conv3d(Tensor(x), Tensor(w), padding=(0, 0, 1)).data
    b = conv3d(Tensor(x), Tensor(w), padding=(0, 0, 1)).data
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=8))
def test_grad_shapes_match_data(vals):
    x = Tensor(np.array(vals), requires_grad=True)
    backward(sum(sigmoid(x) * x))
    assert x.grad.shape == x.shape


def test_getitem_scatter_accumulates_duplicates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    backward(sum(getitem(x, [1, 1, 2])))
    np.testing.assert_array_equal(x.grad, [0, 2, 1, 0])
