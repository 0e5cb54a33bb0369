"""Deterministic NCHW tensor engine."""

from cfkit.tensor import reference
from cfkit.tensor.ops import (
    Tensor,
    adaptive_avg_pool,
    add,
    avg_pool,
    batchnorm_infer,
    check_finite,
    concat_channels,
    conv2d,
    conv2d_backward,
    get_num_threads,
    global_avg_pool,
    hadamard,
    linear,
    matmul,
    relu6,
    set_num_threads,
    sigmoid,
    softmax_rows,
    split_channels,
    upsample_bilinear,
)

__all__ = [
    "Tensor",
    "reference",
    "adaptive_avg_pool",
    "add",
    "avg_pool",
    "batchnorm_infer",
    "check_finite",
    "concat_channels",
    "conv2d",
    "conv2d_backward",
    "get_num_threads",
    "global_avg_pool",
    "hadamard",
    "linear",
    "matmul",
    "relu6",
    "set_num_threads",
    "sigmoid",
    "softmax_rows",
    "split_channels",
    "upsample_bilinear",
]
