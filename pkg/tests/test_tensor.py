"""Tests for the tensor engine."""

import numpy as np
import pytest

from cfkit.exceptions import ConfigurationError, NumericError
from cfkit.tensor import ops, reference
from cfkit.types import BatchNormParams, ConvSpec


def _grad_numeric(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        plus = f(x)
        x.flat[i] = orig - h
        minus = f(x)
        x.flat[i] = orig
        g.flat[i] = (plus - minus) / (2 * h)
    return g


def test_conv_output_shape_floor_rule():
    """Test conv output extents follow (H + 2p - k) // s + 1."""
    x = np.zeros((1, 3, 7, 8))
    spec = ConvSpec(kind="dense", kernel=(3, 3), stride=2, padding=1, in_channels=3, out_channels=4)
    assert ops.conv2d(x, np.zeros(spec.weight_shape), spec).shape == (1, 4, 4, 4)


def test_conv_matches_naive_for_each_kind():
    """Test dense, depthwise and pointwise convs against the naive loops."""
    rng = np.random.default_rng(0)
    specs = [
        ConvSpec.dense(3, 5, 3, stride=2),
        ConvSpec.depthwise(4, 5),
        ConvSpec.pointwise(6, 2),
    ]
    for spec in specs:
        x = rng.standard_normal((2, spec.in_channels, 9, 7))
        w = rng.standard_normal(spec.weight_shape)
        np.testing.assert_allclose(ops.conv2d(x, w, spec), reference.conv2d(x, w, spec), atol=1e-12)


def test_conv_gaussian_float32_within_tolerance():
    """Test a Gaussian 2x8x16x16 input with a dense 3x3 kernel agrees with the naive loops in float32."""
    rng = np.random.default_rng(11)
    spec = ConvSpec.dense(8, 8, 3)
    x = (rng.standard_normal((2, 8, 16, 16)) * 0.5).astype(np.float32)
    w = (rng.standard_normal(spec.weight_shape) * 0.5 / np.sqrt(72)).astype(np.float32)
    out = ops.conv2d(x, w, spec)
    assert out.dtype == np.float32
    diff = np.abs(out.astype(np.float64) - reference.conv2d(x, w, spec).astype(np.float64))
    assert diff.max() < 1e-6
    # non-dyadic values: float32 rounding does occur
    assert diff.max() > 0


def test_depthwise_rejects_channel_change():
    """Test depthwise specs must keep the channel count."""
    with pytest.raises(ConfigurationError) as exc_info:
        ConvSpec(kind="depthwise", kernel=(3, 3), in_channels=4, out_channels=8)
    assert exc_info.value.field == "out_channels"


def test_conv_rejects_wrong_weight_shape():
    """Test conv2d validates the weight shape."""
    spec = ConvSpec.pointwise(3, 4)
    with pytest.raises(ConfigurationError):
        ops.conv2d(np.zeros((1, 3, 2, 2)), np.zeros((4, 2, 1, 1)), spec)


def test_conv_thread_count_is_bit_identical():
    """Test splitting the batch across threads does not change results."""
    rng = np.random.default_rng(1)
    spec = ConvSpec.dense(3, 8, 3)
    x = rng.standard_normal((4, 3, 10, 10)).astype(np.float32)
    w = rng.standard_normal(spec.weight_shape).astype(np.float32)
    single = ops.conv2d(x, w, spec)
    ops.set_num_threads(3)
    try:
        multi = ops.conv2d(x, w, spec)
    finally:
        ops.set_num_threads(1)
    assert np.array_equal(single, multi)


def test_set_num_threads_rejects_zero():
    """Test thread count validation."""
    with pytest.raises(ConfigurationError):
        ops.set_num_threads(0)


def test_conv_backward_matches_finite_differences():
    """Test conv2d_backward input and weight gradients."""
    rng = np.random.default_rng(2)
    spec = ConvSpec(kind="dense", kernel=(3, 3), stride=2, padding=1, in_channels=2, out_channels=3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal(spec.weight_shape)
    g = rng.standard_normal((1, 3, 3, 3))
    gx, gw = ops.conv2d_backward(g, x, w, spec)
    np.testing.assert_allclose(gx, _grad_numeric(lambda v: np.sum(ops.conv2d(v, w, spec) * g), x), atol=1e-6)
    np.testing.assert_allclose(gw, _grad_numeric(lambda v: np.sum(ops.conv2d(x, v, spec) * g), w), atol=1e-6)


def test_depthwise_backward_matches_finite_differences():
    """Test conv2d_backward on a depthwise kernel."""
    rng = np.random.default_rng(3)
    spec = ConvSpec.depthwise(3, 3)
    x = rng.standard_normal((1, 3, 4, 4))
    w = rng.standard_normal(spec.weight_shape)
    g = rng.standard_normal((1, 3, 4, 4))
    gx, gw = ops.conv2d_backward(g, x, w, spec)
    np.testing.assert_allclose(gx, _grad_numeric(lambda v: np.sum(ops.conv2d(v, w, spec) * g), x), atol=1e-6)
    np.testing.assert_allclose(gw, _grad_numeric(lambda v: np.sum(ops.conv2d(x, v, spec) * g), w), atol=1e-6)


def test_batchnorm_identity_stats():
    """Test BN with identity statistics only applies eps."""
    x = np.random.default_rng(4).standard_normal((1, 3, 2, 2))
    y = ops.batchnorm_infer(x, BatchNormParams.identity(3, np.float64))
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5))


def test_batchnorm_rejects_negative_variance():
    """Test BN parameter validation."""
    with pytest.raises(ConfigurationError):
        BatchNormParams(gamma=np.ones(2), beta=np.zeros(2), mean=np.zeros(2), var=np.array([1.0, -1.0]))


def test_relu6_clamps_and_backward_masks():
    """Test relu6 bounds and its derivative mask."""
    x = np.array([-1.0, 0.0, 3.0, 6.0, 7.0]).reshape(1, 1, 1, 5)
    np.testing.assert_array_equal(ops.relu6(x).ravel(), [0, 0, 3, 6, 6])
    np.testing.assert_array_equal(ops.relu6_backward(np.ones_like(x), x).ravel(), [0, 0, 1, 0, 0])


def test_sigmoid_stays_in_open_interval():
    """Test sigmoid never reaches 0 or 1, even at large magnitudes."""
    for dtype in (np.float32, np.float64):
        y = ops.sigmoid(np.array([-1000.0, 0.0, 1000.0], dtype=dtype))
        assert np.all((y > 0) & (y < 1))
        assert y[1] == pytest.approx(0.5)


def test_softmax_rows_normalized():
    """Test softmax rows sum to one and survive large logits."""
    m = np.array([[1000.0, 1000.0], [0.0, np.log(3.0)]])
    s = ops.softmax_rows(m)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0)
    np.testing.assert_allclose(s, [[0.5, 0.5], [0.25, 0.75]])


def test_softmax_backward_matches_finite_differences():
    """Test softmax_backward."""
    rng = np.random.default_rng(5)
    m = rng.standard_normal((2, 4))
    g = rng.standard_normal((2, 4))
    analytic = ops.softmax_backward(g, ops.softmax_rows(m))
    np.testing.assert_allclose(analytic, _grad_numeric(lambda v: np.sum(ops.softmax_rows(v) * g), m), atol=1e-8)


def test_avg_pool_requires_divisible_target():
    """Test avg_pool rejects targets that do not divide the input."""
    with pytest.raises(ConfigurationError):
        ops.avg_pool(np.zeros((1, 1, 6, 6)), 4, 4)


def test_adaptive_pool_equals_avg_pool_when_divisible():
    """Test adaptive pooling reduces to plain pooling on divisible sizes."""
    x = np.random.default_rng(6).standard_normal((1, 2, 8, 12))
    np.testing.assert_allclose(ops.adaptive_avg_pool(x, 2, 3), ops.avg_pool(x, 2, 3))


def test_adaptive_pool_floor_ceil_windows():
    """Test adaptive windows on a non-divisible size."""
    x = np.arange(5.0).reshape(1, 1, 1, 5)
    # windows [0, 2) [1, 4) [3, 5)
    np.testing.assert_allclose(ops.adaptive_avg_pool(x, 1, 3).ravel(), [0.5, 2.0, 3.5])


def test_pool_backward_matches_finite_differences():
    """Test avg, adaptive and global pooling backward passes."""
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 5, 7))
    g = rng.standard_normal((1, 2, 2, 3))
    np.testing.assert_allclose(
        ops.adaptive_avg_pool_backward(g, 5, 7),
        _grad_numeric(lambda v: np.sum(ops.adaptive_avg_pool(v, 2, 3) * g), x),
        atol=1e-8,
    )
    x = rng.standard_normal((1, 2, 4, 6))
    np.testing.assert_allclose(
        ops.avg_pool_backward(g, 4, 6), _grad_numeric(lambda v: np.sum(ops.avg_pool(v, 2, 3) * g), x), atol=1e-8
    )
    gg = rng.standard_normal((1, 2, 1, 1))
    np.testing.assert_allclose(
        ops.global_avg_pool_backward(gg, 4, 6),
        _grad_numeric(lambda v: np.sum(ops.global_avg_pool(v) * gg), x),
        atol=1e-8,
    )


def test_upsample_preserves_constants_and_identity():
    """Test bilinear upsampling of constants and same-size inputs."""
    c = np.full((1, 1, 3, 4), 2.5)
    np.testing.assert_allclose(ops.upsample_bilinear(c, 9, 10), 2.5)
    x = np.random.default_rng(8).standard_normal((1, 2, 3, 4))
    np.testing.assert_array_equal(ops.upsample_bilinear(x, 3, 4), x)


def test_upsample_half_pixel_weights():
    """Test 2x upsampling of [0, 1] uses half-pixel centres."""
    x = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    np.testing.assert_allclose(ops.upsample_bilinear(x, 1, 4).ravel(), [0.0, 0.25, 0.75, 1.0])


def test_upsample_rejects_downscale():
    """Test upsample_bilinear refuses to shrink."""
    with pytest.raises(ConfigurationError):
        ops.upsample_bilinear(np.zeros((1, 1, 4, 4)), 2, 2)


def test_upsample_backward_is_adjoint():
    """Test <up(x), g> == <x, up^T(g)>."""
    rng = np.random.default_rng(9)
    x = rng.standard_normal((1, 2, 3, 5))
    g = rng.standard_normal((1, 2, 7, 11))
    lhs = np.sum(ops.upsample_bilinear(x, 7, 11) * g)
    rhs = np.sum(x * ops.upsample_bilinear_backward(g, 3, 5))
    assert lhs == pytest.approx(rhs)


def test_linear_and_backward():
    """Test linear forward against the naive loop and its backward shapes."""
    rng = np.random.default_rng(10)
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
    np.testing.assert_allclose(ops.linear(x, w, b), reference.linear(x, w, b), atol=1e-12)
    gx, gw, gb = ops.linear_backward(np.ones((3, 2)), x, w)
    assert gx.shape == x.shape and gw.shape == w.shape and gb.shape == b.shape


def test_matmul_rejects_inner_mismatch():
    """Test matmul shape validation."""
    with pytest.raises(ConfigurationError):
        ops.matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_concat_split_round_trip():
    """Test split_channels inverts concat_channels."""
    rng = np.random.default_rng(11)
    parts = [rng.standard_normal((1, c, 2, 2)) for c in (1, 3, 2)]
    back = ops.split_channels(ops.concat_channels(parts), [1, 3, 2])
    for a, b in zip(parts, back):
        np.testing.assert_array_equal(a, b)


def test_concat_rejects_spatial_mismatch():
    """Test concat_channels requires matching N, H and W."""
    with pytest.raises(ConfigurationError):
        ops.concat_channels([np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 2))])


def test_elementwise_shape_mismatch():
    """Test add and hadamard require equal shapes."""
    with pytest.raises(ConfigurationError):
        ops.add(np.zeros((1, 2, 2, 2)), np.zeros((1, 1, 2, 2)))
    with pytest.raises(ConfigurationError):
        ops.hadamard(np.zeros((1, 2, 2, 2)), np.zeros((1, 2, 2, 1)))


def test_check_finite_counts_bad_values():
    """Test NumericError names the operator and counts non-finite values."""
    with pytest.raises(NumericError) as exc_info:
        ops.check_finite(np.array([1.0, np.nan, np.inf]), "sample")
    assert exc_info.value.op == "sample"
    assert exc_info.value.count == 2


def test_ops_do_not_mutate_inputs():
    """Test operators leave their inputs untouched."""
    x = np.random.default_rng(12).standard_normal((1, 2, 4, 4))
    before = x.copy()
    ops.relu6(x)
    ops.sigmoid(x)
    ops.upsample_bilinear(x, 8, 8)
    ops.avg_pool(x, 2, 2)
    np.testing.assert_array_equal(x, before)
