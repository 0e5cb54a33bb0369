"""Optimized NCHW operators with analytic backward passes.

Every function is pure: inputs are never modified and outputs are fresh arrays.
Reductions run per sample in a fixed order, so splitting a batch across
threads yields bit-identical results to the sequential path.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cfkit.exceptions import ConfigurationError, NumericError
from cfkit.types import BatchNormParams, ConvSpec

logger = logging.getLogger(__name__)

Tensor = np.ndarray

_num_threads = 1


def set_num_threads(n: int) -> None:
    """Set the worker count used to split batches inside conv2d."""
    global _num_threads
    if n < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {n}", field="threads")
    _num_threads = n


def get_num_threads() -> int:
    return _num_threads


def check_finite(x: Tensor, op: str) -> Tensor:
    """Raise NumericError if ``x`` holds NaN or Inf."""
    if not np.all(np.isfinite(x)):
        raise NumericError(op, int(x.size - np.count_nonzero(np.isfinite(x))))
    return x


def _require_4d(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ConfigurationError(f"{op} expects an NCHW tensor, got shape {x.shape}")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _map_batch(fn: Callable[[int], Tensor], n: int) -> List[Tensor]:
    if _num_threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(_num_threads, n)) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


# --------------------------------------------------------------------------- conv


def _check_conv(x: Tensor, w: Tensor, spec: ConvSpec) -> None:
    _require_4d(x, "conv2d")
    if x.shape[1] != spec.in_channels:
        raise ConfigurationError(
            f"conv2d: input has {x.shape[1]} channels, spec expects {spec.in_channels}", field="in_channels"
        )
    if tuple(w.shape) != spec.weight_shape:
        raise ConfigurationError(f"conv2d: weight shape {w.shape} != {spec.weight_shape} for {spec.kind}")


def _pad(x: Tensor, p: int) -> Tensor:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: Tensor, spec: ConvSpec, oh: int, ow: int) -> Tensor:
    """(C, oh, ow, kh, kw) view of one padded sample."""
    kh, kw = spec.kernel
    s = spec.stride
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return win[:, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s]


def conv2d(x: Tensor, w: Tensor, spec: ConvSpec) -> Tensor:
    """Cross-correlation of ``x`` with ``w`` (no bias)."""
    _check_conv(x, w, spec)
    oh, ow = spec.output_hw(x.shape[2], x.shape[3])
    xp = _pad(x, spec.padding)

    if spec.kind == "pointwise" and spec.stride == 1:
        w2 = w[:, :, 0, 0]

        def one(n: int) -> Tensor:
            return (w2 @ xp[n].reshape(spec.in_channels, -1)).reshape(spec.out_channels, oh, ow)

    elif spec.kind == "depthwise":
        wd = w[:, 0]

        def one(n: int) -> Tensor:
            return np.einsum("chwij,cij->chw", _windows(xp[n], spec, oh, ow), wd)

    else:

        def one(n: int) -> Tensor:
            return np.tensordot(w, _windows(xp[n], spec, oh, ow), axes=([1, 2, 3], [0, 3, 4]))

    out = np.stack(_map_batch(one, x.shape[0])).astype(x.dtype, copy=False)
    return check_finite(out, "conv2d")


def conv2d_backward(grad_out: Tensor, x: Tensor, w: Tensor, spec: ConvSpec) -> Tuple[Tensor, Tensor]:
    """Gradients of conv2d with respect to its input and weights."""
    _check_conv(x, w, spec)
    oh, ow = spec.output_hw(x.shape[2], x.shape[3])
    expected = (x.shape[0], spec.out_channels, oh, ow)
    if grad_out.shape != expected:
        raise ConfigurationError(f"conv2d_backward: grad shape {grad_out.shape} != {expected}")

    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    xp = _pad(x, p)
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    rows = [slice(i, i + s * (oh - 1) + 1, s) for i in range(kh)]
    cols = [slice(j, j + s * (ow - 1) + 1, s) for j in range(kw)]

    for n in range(x.shape[0]):
        g = grad_out[n]
        win = _windows(xp[n], spec, oh, ow)
        if spec.kind == "depthwise":
            grad_w[:, 0] += np.einsum("chw,chwij->cij", g, win)
            for i in range(kh):
                for j in range(kw):
                    grad_xp[n, :, rows[i], cols[j]] += w[:, 0, i, j][:, None, None] * g
        else:
            grad_w += np.tensordot(g, win, axes=([1, 2], [1, 2]))
            for i in range(kh):
                for j in range(kw):
                    grad_xp[n, :, rows[i], cols[j]] += np.tensordot(w[:, :, i, j], g, axes=([0], [0]))

    grad_x = grad_xp[:, :, p : p + x.shape[2], p : p + x.shape[3]] if p else grad_xp
    return np.ascontiguousarray(grad_x), grad_w


# ---------------------------------------------------------------------- batchnorm


def _bn_affine(params: BatchNormParams) -> Tuple[np.ndarray, np.ndarray]:
    inv = 1.0 / np.sqrt(params.var.astype(np.float64) + params.eps)
    scale = params.gamma.astype(np.float64) * inv
    shift = params.beta.astype(np.float64) - params.mean.astype(np.float64) * scale
    return scale, shift


def batchnorm_infer(x: Tensor, params: BatchNormParams) -> Tensor:
    """Inference-mode BN: (x - mean) / sqrt(var + eps) * gamma + beta."""
    _require_4d(x, "batchnorm_infer")
    if x.shape[1] != params.channels:
        raise ConfigurationError(f"batchnorm: input has {x.shape[1]} channels, params have {params.channels}")
    scale, shift = _bn_affine(params)
    out = x.astype(np.float64) * scale[:, None, None] + shift[:, None, None]
    return check_finite(out.astype(x.dtype), "batchnorm_infer")


def batchnorm_backward(grad_out: Tensor, x: Tensor, params: BatchNormParams) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_x, grad_gamma, grad_beta)."""
    _same_shape(grad_out, x, "batchnorm_backward")
    inv = (1.0 / np.sqrt(params.var.astype(np.float64) + params.eps)).astype(x.dtype)
    grad_x = grad_out * (params.gamma * inv)[:, None, None]
    x_hat = (x - params.mean[:, None, None]) * inv[:, None, None]
    grad_gamma = np.sum(grad_out * x_hat, axis=(0, 2, 3))
    grad_beta = np.sum(grad_out, axis=(0, 2, 3))
    return grad_x, grad_gamma, grad_beta


# -------------------------------------------------------------------- activations


def relu6(x: Tensor) -> Tensor:
    return np.clip(x, 0, 6)


def relu6_backward(grad_out: Tensor, x: Tensor) -> Tensor:
    return grad_out * ((x > 0) & (x < 6))


def sigmoid(x: Tensor) -> Tensor:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the open interval at saturation
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, 1.0 - info.epsneg)


def sigmoid_backward(grad_out: Tensor, y: Tensor) -> Tensor:
    return grad_out * y * (1.0 - y)


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    e = np.exp(m - np.max(m, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(grad_out: Tensor, y: Tensor) -> Tensor:
    return y * (grad_out - np.sum(grad_out * y, axis=-1, keepdims=True))


# ------------------------------------------------------------------------ pooling


def avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean over disjoint windows; the target must divide the input."""
    _require_4d(x, "avg_pool")
    n, c, h, w = x.shape
    if out_h <= 0 or out_w <= 0 or h % out_h or w % out_w:
        raise ConfigurationError(f"avg_pool: {out_h}x{out_w} does not divide {h}x{w}")
    kh, kw = h // out_h, w // out_w
    return x.reshape(n, c, out_h, kh, out_w, kw).mean(axis=(3, 5), dtype=np.float64).astype(x.dtype)


def avg_pool_backward(grad_out: Tensor, in_h: int, in_w: int) -> Tensor:
    kh, kw = in_h // grad_out.shape[2], in_w // grad_out.shape[3]
    return np.repeat(np.repeat(grad_out, kh, axis=2), kw, axis=3) / (kh * kw)


def _resample(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """rows @ x @ cols.T over the spatial axes, accumulated in float64."""
    return np.matmul(np.matmul(rows, x.astype(np.float64)), cols.T).astype(x.dtype)


def _adaptive_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        start = (i * n_in) // n_out
        end = -((-(i + 1) * n_in) // n_out)
        m[i, start:end] = 1.0 / (end - start)
    return m


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean over floor/ceil windows; equals avg_pool when the target divides."""
    _require_4d(x, "adaptive_avg_pool")
    if not (0 < out_h <= x.shape[2] and 0 < out_w <= x.shape[3]):
        raise ConfigurationError(f"adaptive_avg_pool: cannot pool {x.shape[2:]} to {out_h}x{out_w}")
    ph = _adaptive_matrix(x.shape[2], out_h)
    pw = _adaptive_matrix(x.shape[3], out_w)
    return _resample(x, ph, pw)


def adaptive_avg_pool_backward(grad_out: Tensor, in_h: int, in_w: int) -> Tensor:
    ph = _adaptive_matrix(in_h, grad_out.shape[2])
    pw = _adaptive_matrix(in_w, grad_out.shape[3])
    return _resample(grad_out, ph.T, pw.T)


def global_avg_pool(x: Tensor) -> Tensor:
    _require_4d(x, "global_avg_pool")
    return x.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype)


def global_avg_pool_backward(grad_out: Tensor, in_h: int, in_w: int) -> Tensor:
    return np.broadcast_to(grad_out / (in_h * in_w), grad_out.shape[:2] + (in_h, in_w)).copy()


# ----------------------------------------------------------------------- resample


def interp_matrix(n_in: int, n_out: int, dtype: np.dtype = np.float64) -> np.ndarray:
    """Half-pixel (align_corners=False) linear interpolation weights, shape (n_out, n_in).

    src = (dst + 0.5) * n_in / n_out - 0.5, clamped at 0; the upper neighbour
    is clamped to the last index.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _require_4d(x, "upsample_bilinear")
    if out_h < x.shape[2] or out_w < x.shape[3]:
        raise ConfigurationError(f"upsample_bilinear: {x.shape[2:]} -> {out_h}x{out_w} is a downscale")
    if (out_h, out_w) == x.shape[2:]:
        return x.copy()
    uh = interp_matrix(x.shape[2], out_h)
    uw = interp_matrix(x.shape[3], out_w)
    return _resample(x, uh, uw)


def upsample_bilinear_backward(grad_out: Tensor, in_h: int, in_w: int) -> Tensor:
    if grad_out.shape[2:] == (in_h, in_w):
        return grad_out.copy()
    uh = interp_matrix(in_h, grad_out.shape[2])
    uw = interp_matrix(in_w, grad_out.shape[3])
    return _resample(grad_out, uh.T, uw.T)


# ------------------------------------------------------------------ linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ConfigurationError(f"matmul: inner dims {a.shape} x {b.shape}")
    return np.matmul(a, b)


def matmul_backward(grad_out: Tensor, a: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    return np.matmul(grad_out, np.swapaxes(b, -1, -2)), np.matmul(np.swapaxes(a, -1, -2), grad_out)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-wise affine map: x (N, in) @ w.T (in, out) + b."""
    if x.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ConfigurationError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    return check_finite(x @ w.T + b, "linear")


def linear_backward(grad_out: Tensor, x: Tensor, w: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ConfigurationError("concat_channels: nothing to concatenate")
    ref = xs[0].shape
    for x in xs:
        _require_4d(x, "concat_channels")
        if (x.shape[0], x.shape[2], x.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ConfigurationError(f"concat_channels: {x.shape} does not match {ref} outside channels")
    return np.concatenate(xs, axis=1)


def split_channels(x: Tensor, sizes: Sequence[int]) -> List[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise ConfigurationError(f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]}")
    return np.split(x, np.cumsum(sizes)[:-1], axis=1)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return a + b


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    return a * b
