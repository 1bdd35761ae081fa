import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from surgskill import tensor_core as tc
from surgskill.errors import ConfigurationError, InternalStateError

from oracles import conv1d_loops, numeric_gradient, relative_error


def conv(kernels, biases=None):
    kernels = np.asarray(kernels, dtype=float)
    if biases is None:
        biases = np.zeros(kernels.shape[0])
    return tc.ConvLayerParams(kernels, np.asarray(biases, dtype=float))


def col(values):
    return np.asarray(values, dtype=float).reshape(1, -1, 1)


# -- conv1d ----------------------------------------------------------------------

def test_conv_hand_example():
    out = tc.conv1d_forward(col([1, 2, 3]), conv([[[1.0], [1.0]]]))
    npt.assert_array_equal(out.ravel(), [3, 5])


def test_conv_zero_kernel(rng):
    x = rng.normal(size=(2, 9, 4))
    out = tc.conv1d_forward(x, conv(np.zeros((3, 2, 4))))
    assert out.shape == (2, 8, 3)
    assert not out.any()


def test_conv_valid_length_formula(rng):
    x = rng.normal(size=(1, 60, 38))
    assert tc.conv1d_forward(x, conv(rng.normal(size=(38, 2, 38)))).shape == (1, 59, 38)


def test_conv_matches_loops(rng):
    x = rng.normal(size=(2, 7, 3))
    p = conv(rng.normal(size=(4, 2, 3)), rng.normal(size=4))
    npt.assert_allclose(tc.conv1d_forward(x, p), conv1d_loops(x, p.kernels, p.biases), rtol=1e-12, atol=1e-12)


def test_conv_channel_mismatch_names_layer(rng):
    p = tc.ConvLayerParams(np.zeros((2, 2, 5)), np.zeros(2), "conv2")
    with pytest.raises(ConfigurationError, match="conv2"):
        tc.conv1d_forward(rng.normal(size=(1, 6, 4)), p)


def test_conv_backward_zero_grad(rng):
    x = rng.normal(size=(2, 6, 3))
    p = conv(rng.normal(size=(4, 2, 3)))
    gx, gp = tc.conv1d_backward(np.zeros((2, 5, 4)), x, p)
    assert not gx.any() and not gp.kernels.any() and not gp.biases.any()


def test_conv_backward_scalar_case():
    # single output out = w0 * 1 + w1 * 2
    _, gp = tc.conv1d_backward(np.ones((1, 1, 1)), col([1, 2]), conv([[[0.3], [0.7]]]))
    npt.assert_array_equal(gp.kernels.ravel(), [1.0, 2.0])
    npt.assert_array_equal(gp.biases, [1.0])


def test_conv_backward_shape_mismatch(rng):
    with pytest.raises(ConfigurationError):
        tc.conv1d_backward(np.zeros((1, 6, 2)), rng.normal(size=(1, 6, 3)), conv(rng.normal(size=(2, 2, 3))))


@pytest.mark.parametrize("seed", range(5))
def test_conv_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 3))
    p = conv(rng.normal(size=(4, 2, 3)), rng.normal(size=4))
    r = rng.normal(size=(2, 5, 4))
    f = lambda: float(np.sum(tc.conv1d_forward(x, p) * r))  # noqa: E731
    gx, gp = tc.conv1d_backward(r, x, p)
    assert relative_error(gx, numeric_gradient(f, x)) < 1e-6
    assert relative_error(gp.kernels, numeric_gradient(f, p.kernels)) < 1e-6
    assert relative_error(gp.biases, numeric_gradient(f, p.biases)) < 1e-6


def test_conv_backward_is_transpose(rng):
    # <A x, y> == <x, A^T y> for the bias-free linear map
    x = rng.normal(size=(3, 8, 5))
    y = rng.normal(size=(3, 7, 4))
    p = conv(rng.normal(size=(4, 2, 5)))
    gx, _ = tc.conv1d_backward(y, x, p)
    npt.assert_allclose(np.sum(tc.conv1d_forward(x, p) * y), np.sum(x * gx), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**32 - 1))
def test_conv_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 1, 6, 3))
    p = conv(rng.normal(size=(2, 2, 3)))
    lhs = tc.conv1d_forward(a * x1 + b * x2, p)
    rhs = a * tc.conv1d_forward(x1, p) + b * tc.conv1d_forward(x2, p)
    npt.assert_allclose(lhs, rhs, atol=1e-10)


# -- max-pool ---------------------------------------------------------------------

def test_maxpool_pairs():
    out = tc.maxpool_forward(col([1, 3, 2, 5]), tc.PoolSpec())
    npt.assert_array_equal(out.ravel(), [3, 5])


def test_maxpool_odd_length(rng):
    assert tc.maxpool_forward(rng.normal(size=(2, 59, 4)), tc.PoolSpec()).shape == (2, 29, 4)


def test_maxpool_tie_goes_to_earlier():
    spec = tc.PoolSpec()
    out = tc.maxpool_forward(col([2, 2]), spec)
    npt.assert_array_equal(out.ravel(), [2])
    assert spec.argmax_memo.ravel().tolist() == [0]


def test_maxpool_backward_routing():
    spec = tc.PoolSpec()
    tc.maxpool_forward(col([2, 5]), spec)
    npt.assert_array_equal(tc.maxpool_backward(col([1]), spec).ravel(), [0, 1])


def test_maxpool_backward_zero_and_trailing(rng):
    spec = tc.PoolSpec()
    tc.maxpool_forward(rng.normal(size=(1, 5, 2)), spec)
    g = tc.maxpool_backward(np.zeros((1, 2, 2)), spec)
    assert g.shape == (1, 5, 2) and not g.any()


def test_maxpool_backward_without_memo():
    with pytest.raises(InternalStateError):
        tc.maxpool_backward(col([1]), tc.PoolSpec())


def test_maxpool_backward_stale_memo(rng):
    spec = tc.PoolSpec()
    tc.maxpool_forward(rng.normal(size=(1, 6, 2)), spec)
    with pytest.raises(InternalStateError):
        tc.maxpool_backward(np.ones((1, 4, 2)), spec)


def test_maxpool_memo_inside_patch(rng):
    spec = tc.PoolSpec()
    tc.maxpool_forward(rng.normal(size=(3, 11, 4)), spec)
    assert set(np.unique(spec.argmax_memo)) <= {0, 1}


@pytest.mark.parametrize("seed", range(5))
def test_maxpool_finite_differences(seed):
    rng = np.random.default_rng(seed)
    # well-separated values so a 1e-5 nudge never flips a max
    x = rng.permutation(np.arange(2 * 9 * 3, dtype=float)).reshape(2, 9, 3) * 0.1
    r = rng.normal(size=(2, 4, 3))
    spec = tc.PoolSpec()
    tc.maxpool_forward(x, spec)
    g = tc.maxpool_backward(r, spec)
    f = lambda: float(np.sum(tc.maxpool_forward(x, tc.PoolSpec()) * r))  # noqa: E731
    assert relative_error(g, numeric_gradient(f, x)) < 1e-6


# -- relu, dense, softmax ------------------------------------------------------------

def test_relu_values():
    npt.assert_array_equal(tc.relu(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])
    npt.assert_array_equal(tc.relu_backward(np.ones(3), np.array([-1.0, 0.0, 2.0])), [0, 0, 1])


def test_relu_finite_differences(rng):
    x = rng.normal(size=(2, 5, 3))
    x[np.abs(x) < 1e-3] = 0.5
    r = rng.normal(size=x.shape)
    f = lambda: float(np.sum(tc.relu(x) * r))  # noqa: E731
    assert relative_error(tc.relu_backward(r, x), numeric_gradient(f, x)) < 1e-6


def dense(w, b):
    return tc.DenseLayerParams(np.asarray(w, dtype=float), np.asarray(b, dtype=float))


def test_dense_identity(rng):
    x = rng.normal(size=(4, 5))
    npt.assert_array_equal(tc.dense_forward(x, dense(np.eye(5), np.zeros(5))), x)


def test_dense_scalar():
    assert tc.dense_forward(np.array([[2.0]]), dense([[3.0]], [1.0]))[0, 0] == 7.0


def test_dense_width_mismatch(rng):
    with pytest.raises(ConfigurationError):
        tc.dense_forward(rng.normal(size=(2, 4)), dense(np.zeros((5, 3)), np.zeros(3)))


@pytest.mark.parametrize("seed", range(5))
def test_dense_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 5))
    p = dense(rng.normal(size=(5, 4)), rng.normal(size=4))
    r = rng.normal(size=(3, 4))
    f = lambda: float(np.sum(tc.dense_forward(x, p) * r))  # noqa: E731
    gx, gp = tc.dense_backward(r, x, p)
    for analytic, arr in ((gx, x), (gp.weights, p.weights), (gp.biases, p.biases)):
        assert relative_error(analytic, numeric_gradient(f, arr)) < 1e-6


def test_softmax_examples():
    npt.assert_allclose(tc.softmax(np.zeros(3)), [1 / 3] * 3, rtol=1e-15)
    big = tc.softmax(np.array([1000.0, 0.0, 0.0]))
    assert np.all(np.isfinite(big))
    npt.assert_allclose(big, [1, 0, 0], atol=1e-300)
    npt.assert_allclose(tc.softmax(np.log([2.0, 1.0, 1.0])), [0.5, 0.25, 0.25], rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-700, 700), min_size=3, max_size=3))
def test_softmax_is_a_distribution(z):
    p = tc.softmax(np.array(z))
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-12


def test_kernels_deterministic(rng):
    x = rng.normal(size=(4, 30, 38))
    p = conv(rng.normal(size=(38, 2, 38)), rng.normal(size=38))
    a = tc.conv1d_forward(x, p)
    b = tc.conv1d_forward(x.copy(), p)
    assert a.tobytes() == b.tobytes()


def test_float32_mode_stays_float32(rng):
    x = rng.normal(size=(2, 10, 3)).astype(np.float32)
    p = tc.ConvLayerParams(rng.normal(size=(4, 2, 3)).astype(np.float32), np.zeros(4, np.float32))
    assert tc.conv1d_forward(x, p).dtype == np.float32
