"""Deliberate defects for checking that the verification harness catches them."""

from contextlib import contextmanager
from typing import Iterator
from unittest import mock

import numpy as np

from cfkit.tensor import ops
from cfkit.types import ConvSpec


@contextmanager
def perturbed_conv_indexing() -> Iterator[None]:
    """Swap ``ops.conv2d`` for a version that reads the kernel back to front.

    Only k > 1 kernels are affected; every caller that looks the operator up
    through the module sees the defect until the context exits.
    """
    original = ops.conv2d

    def flipped(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
        return original(x, np.ascontiguousarray(w[:, :, ::-1, ::-1]), spec)

    with mock.patch.object(ops, "conv2d", flipped):
        yield
