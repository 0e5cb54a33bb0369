"""Segmentation and classification heads."""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from cfkit.blocks.base import Grads, Module, ParamStore, Sequential, Shape, Tape, elementwise_node
from cfkit.blocks.layers import ConvBN, Linear
from cfkit.exceptions import ConfigurationError
from cfkit.tensor import ops
from cfkit.types import ConvSpec, NodeCost, ParamSpec


class SegHead(Module):
    """Upsample-and-sum the merged scales (coarse to fine), then two 1x1 convs.

    conv1 carries bias, BN and ReLU6; conv2 carries bias only.
    """

    def __init__(self, channels: int, num_classes: int, num_scales: int):
        super().__init__("heads.seg")
        self.num_scales = num_scales
        self.convs = Sequential(
            "heads.seg",
            [
                ConvBN("heads.seg.conv1", ConvSpec.pointwise(channels, channels), bias=True, act="relu6"),
                ConvBN("heads.seg.conv2", ConvSpec.pointwise(channels, num_classes), bn=False, bias=True),
            ],
        )

    def parameters(self) -> List[ParamSpec]:
        return self.convs.parameters()

    def _check(self, shapes: Sequence[Tuple[int, ...]]) -> None:
        if len(shapes) != self.num_scales:
            raise ConfigurationError(f"segmentation head expects {self.num_scales} scales, got {len(shapes)}")
        for coarse, fine in zip(shapes, shapes[1:]):
            if coarse[2] > fine[2] or coarse[3] > fine[3] or coarse[1] != fine[1]:
                raise ConfigurationError(f"scales must go coarse to fine with equal channels: {coarse} then {fine}")

    def forward(self, merged: Sequence[np.ndarray], store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        self._check([m.shape for m in merged])
        y = merged[0]
        for nxt in merged[1:]:
            y = ops.add(ops.upsample_bilinear(y, nxt.shape[2], nxt.shape[3]), nxt)
        if tape is not None:
            tape.save(self.name, hw=[m.shape[2:] for m in merged])
        return self.convs.forward(y, store, tape)

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> List[np.ndarray]:
        """Gradients for each merged scale, coarse to fine."""
        hw = tape.load(self.name)["hw"]
        g = self.convs.backward(grad, store, tape, grads)
        out: List[np.ndarray] = [g] * len(hw)
        for i in range(len(hw) - 1, 0, -1):
            out[i] = g
            g = ops.upsample_bilinear_backward(g, hw[i - 1][0], hw[i - 1][1])
        out[0] = g
        return out

    def costs(self, shapes: Sequence[Shape], itemsize: int) -> Tuple[List[NodeCost], Shape]:
        self._check(shapes)
        nodes: List[NodeCost] = []
        for i, shape in enumerate(shapes[1:], start=1):
            nodes.append(elementwise_node(f"heads.seg.merge{i}", "upsample_bilinear+add", shape, itemsize, 5))
        sub, out = self.convs.costs(shapes[-1], itemsize)
        return nodes + sub, out


class ClsHead(Module):
    """Global average pool then a linear layer."""

    def __init__(self, channels: int, num_classes: int):
        super().__init__("heads.cls")
        self.fc = Linear("heads.cls.fc", channels, num_classes)

    def parameters(self) -> List[ParamSpec]:
        return self.fc.parameters()

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        if tape is not None:
            tape.save(self.name, hw=x.shape[2:])
        return self.fc.forward(ops.global_avg_pool(x)[:, :, 0, 0], store, tape)

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        h, w = tape.load(self.name)["hw"]
        g = self.fc.backward(grad, store, tape, grads)
        return ops.global_avg_pool_backward(g[:, :, None, None], h, w)

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        pooled = (shape[0], shape[1])
        pool = elementwise_node("heads.cls.pool", "global_avg_pool", pooled, itemsize)
        pool.minor_ops = int(np.prod(shape, dtype=np.int64))
        sub, out = self.fc.costs(pooled, itemsize)
        return [pool] + sub, out
