import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motiondiff import tensor as T
from motiondiff.adam import AdamState, NonFiniteGradientError, adam_step
from motiondiff.tensor import AutogradError, Tensor

from helpers import check_grad, numerical_grad, rel_error

SEEDS = range(20)


# -- conv1d ---------------------------------------------------------------


def conv_oracle(x, w, b, stride, pad):
    """Naive triple-loop convolution."""
    cout, cin, k = w.shape
    n = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad)))
    nout = (n + 2 * pad - k) // stride + 1
    out = np.zeros((cout, nout))
    for o in range(cout):
        for j in range(nout):
            acc = b[o]
            for c in range(cin):
                for kk in range(k):
                    acc += w[o, c, kk] * xp[c, j * stride + kk]
            out[o, j] = acc
    return out


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).standard_normal((3, 11))
    w = np.zeros((3, 3, 1))
    for c in range(3):
        w[c, c, 0] = 1.0
    out = T.conv1d(Tensor(x), Tensor(w), stride=1, pad=0)
    np.testing.assert_array_equal(out.data, x)


def test_conv1d_matches_naive_oracle():
    x = np.array([[0.0, 1.0, 2.0, 3.0]])
    w = np.array([[[1.0, 0.0, -1.0]]])
    b = np.zeros(1)
    out = T.conv1d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                   Tensor(b, dtype=np.float64), stride=1, pad=1)
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b, 1, 1))


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (3, 2)])
def test_conv1d_random_vs_oracle(stride, pad):
    rng = np.random.default_rng(42)
    x = rng.standard_normal((4, 13))
    w = rng.standard_normal((5, 4, 3))
    b = rng.standard_normal(5)
    out = T.conv1d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                   Tensor(b, dtype=np.float64), stride=stride, pad=pad)
    np.testing.assert_allclose(out.data, conv_oracle(x, w, b, stride, pad), atol=1e-12)


def test_conv1d_zero_input_gives_zero():
    out = T.conv1d(Tensor(np.zeros((2, 9))), Tensor(np.random.default_rng(1)
                                                    .standard_normal((3, 2, 3))), pad=1)
    np.testing.assert_array_equal(out.data, np.zeros((3, 9), np.float32))


def test_conv1d_channel_mismatch_raises():
    with pytest.raises(AutogradError, match="channel mismatch"):
        T.conv1d(Tensor(np.zeros((2, 9))), Tensor(np.zeros((3, 4, 3))))


def test_conv1d_linearity():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 10))
    y = rng.standard_normal((3, 10))
    w = Tensor(rng.standard_normal((2, 3, 3)), dtype=np.float64)
    a, b = 1.7, -0.3
    lhs = T.conv1d(Tensor(a * x + b * y, dtype=np.float64), w, pad=1).data
    rhs = (a * T.conv1d(Tensor(x, dtype=np.float64), w, pad=1).data
           + b * T.conv1d(Tensor(y, dtype=np.float64), w, pad=1).data)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


# -- gradient checks per op class -----------------------------------------


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv1d(seed):
    check_grad(lambda x, w, b: T.conv1d(x, w, b, stride=1, pad=1),
               [(1, 3, 9), (4, 3, 3), (4,)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_conv1d_strided(seed):
    check_grad(lambda x, w: T.conv1d(x, w, stride=2, pad=1),
               [(2, 3, 11), (4, 3, 3)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise(seed):
    check_grad(lambda a, b: a * b + T.silu(a) - (b ** 2.0), [(3, 5), (3, 5)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_broadcast(seed):
    check_grad(lambda a, b: a + b * a, [(2, 3, 4), (1, 3, 1)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul(seed):
    check_grad(lambda a, b: T.matmul(a, b), [(3, 4), (4, 5)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_reductions(seed):
    check_grad(lambda a: T.tmean(a, axis=1, keepdims=True) + T.tsum(a, axis=0, keepdims=True),
               [(4, 5)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_concat_narrow_reshape(seed):
    def op(a, b):
        c = T.concat([a, b], axis=1)
        return T.reshape(T.narrow(c, 1, 3, axis=1), (1, 3, 4))
    check_grad(op, [(1, 2, 4), (1, 3, 4)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_avg_pool(seed):
    check_grad(lambda a: T.avg_pool2(a), [(2, 3, 9)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_upsample(seed):
    check_grad(lambda a: T.upsample_linear2(a, 13), [(2, 3, 7)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_resample(seed):
    check_grad(lambda a: T.resample_linear(a, 11), [(1, 2, 7)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_group_norm(seed):
    check_grad(lambda x, g, b: T.group_norm(x, g, b, groups=2),
               [(2, 4, 5), (4,), (4,)], seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_broadcast_frames(seed):
    check_grad(lambda v: T.broadcast_frames(v, 2, 5), [(3,)], seed)


# -- simple analytic cases -------------------------------------------------


def test_square_gradient_analytic():
    x = Tensor(np.array(3.0), requires_grad=True, dtype=np.float64)
    (x ** 2.0).backward()
    assert x.grad == pytest.approx(6.0)


def test_constant_node_zero_gradient():
    x = Tensor(np.array(2.0), requires_grad=True, dtype=np.float64)
    c = Tensor(np.array(5.0), requires_grad=True, dtype=np.float64)
    (x * 3.0).backward()
    grads = [x.grad, c.grad]
    assert grads[0] == pytest.approx(3.0)
    assert grads[1] is None  # never touched by the graph


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(AutogradError, match="scalar"):
        (x * 2.0).backward()


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8))
    w = rng.standard_normal((4, 3, 3))
    a = T.conv1d(Tensor(x), Tensor(w), pad=1).data
    b = T.conv1d(Tensor(x), Tensor(w), pad=1).data
    np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_grad_silu_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    leaf = Tensor(x, requires_grad=True, dtype=np.float64)
    T.tsum(T.silu(leaf)).backward()
    fd = numerical_grad(lambda a: float(T.silu(Tensor(a, dtype=np.float64)).data.sum()), x)
    assert rel_error(leaf.grad, fd) < 1e-6


# -- Adam -------------------------------------------------------------------


def test_adam_zero_gradient_no_change():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)}
    st_ = AdamState(lr=1e-2)
    adam_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])
    np.testing.assert_array_equal(st_.m["w"], np.zeros(2))
    np.testing.assert_array_equal(st_.v["w"], np.zeros(2))


def test_adam_single_step_matches_formula():
    # hand evaluation: m=(1-b1)g, v=(1-b2)g^2, bias-corrected -> update = -lr*g/(|g|+eps)
    lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
    g = 1.0
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = 0.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    p = {"w": Tensor(np.array(0.0), requires_grad=True, dtype=np.float64)}
    adam_step(p, {"w": np.array(g)}, AdamState(lr=lr))
    assert float(p["w"].data) == pytest.approx(expected, rel=1e-12)
    assert float(p["w"].data) == pytest.approx(-lr, rel=1e-4)


def test_adam_identical_params_identical_updates():
    p = {"a": Tensor(np.array(0.5), requires_grad=True, dtype=np.float64),
         "b": Tensor(np.array(0.5), requires_grad=True, dtype=np.float64)}
    adam_step(p, {"a": np.array(0.3), "b": np.array(0.3)}, AdamState(lr=1e-3))
    assert float(p["a"].data) == float(p["b"].data)


def test_adam_rejects_non_finite():
    p = {"w": Tensor(np.array(1.0), requires_grad=True, dtype=np.float64)}
    st_ = AdamState()
    with pytest.raises(NonFiniteGradientError):
        adam_step(p, {"w": np.array(np.nan)}, st_)
    assert float(p["w"].data) == 1.0
    assert st_.step_count == 0
