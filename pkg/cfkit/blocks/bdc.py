"""Branched depthwise convolution with channel attention."""

from typing import List, Optional, Tuple

import numpy as np

from cfkit.blocks.base import Grads, Layer, ParamStore, Sequential, Shape, Tape, elementwise_node
from cfkit.blocks.layers import ConvBN, Linear
from cfkit.tensor import ops
from cfkit.types import ConvSpec, NodeCost, ParamSpec, TransBDCSpec


class ChannelAttention(Layer):
    """Global pool -> FC (C -> C/r) -> ReLU6 -> FC (C/r -> C) -> sigmoid -> per-channel gate."""

    def __init__(self, name: str, channels: int, reduction: int):
        super().__init__(name)
        hidden = max(1, channels // reduction)
        self.fc1 = Linear(f"{name}.fc1", channels, hidden, act="relu6")
        self.fc2 = Linear(f"{name}.fc2", hidden, channels, act="sigmoid")

    def parameters(self) -> List[ParamSpec]:
        return self.fc1.parameters() + self.fc2.parameters()

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        squeezed = ops.global_avg_pool(x)[:, :, 0, 0]
        gate = self.fc2.forward(self.fc1.forward(squeezed, store, tape), store, tape)
        if tape is not None:
            tape.save(self.name, x=x, gate=gate)
        return ops.hadamard(x, np.broadcast_to(gate[:, :, None, None], x.shape))

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        rec = tape.load(self.name)
        x, gate = rec["x"], rec["gate"]
        g_gate = np.sum(grad * x, axis=(2, 3))
        g_squeezed = self.fc1.backward(self.fc2.backward(g_gate, store, tape, grads), store, tape, grads)
        g_pool = ops.global_avg_pool_backward(g_squeezed[:, :, None, None], x.shape[2], x.shape[3])
        return grad * gate[:, :, None, None] + g_pool

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        n, c = shape[0], shape[1]
        squeeze = elementwise_node(f"{self.name}.pool", "global_avg_pool", (n, c), itemsize)
        squeeze.minor_ops = int(np.prod(shape, dtype=np.int64))
        fc1, mid = self.fc1.costs((n, c), itemsize)
        fc2, _ = self.fc2.costs(mid, itemsize)
        gate = elementwise_node(f"{self.name}.gate", "hadamard", shape, itemsize)
        return [squeeze] + fc1 + fc2 + [gate], shape


class BranchedDepthwise(Layer):
    """delta' = dw3(x) + dw1(x) + pw(dw3(x)) + x, optionally channel-gated.

    Disabled branches drop out of the sum. The gate only exists when channel
    attention is on.
    """

    def __init__(self, name: str, channels: int, spec: TransBDCSpec):
        super().__init__(name)
        self.branches: List[Layer] = []
        if spec.use_dw3:
            self.branches.append(ConvBN(f"{name}.dw3", ConvSpec.depthwise(channels, 3)))
        if spec.use_dw1:
            self.branches.append(ConvBN(f"{name}.dw1", ConvSpec.depthwise(channels, 1)))
        if spec.use_dwsep:
            self.branches.append(
                Sequential(
                    f"{name}.dwsep",
                    [
                        ConvBN(f"{name}.dwsep.dw", ConvSpec.depthwise(channels, 3)),
                        ConvBN(f"{name}.dwsep.pw", ConvSpec.pointwise(channels, channels)),
                    ],
                )
            )
        self.attention = (
            ChannelAttention(f"{name}.ca", channels, spec.ca_reduction) if spec.use_channel_attention else None
        )

    def parameters(self) -> List[ParamSpec]:
        specs = [p for b in self.branches for p in b.parameters()]
        if self.attention is not None:
            specs += self.attention.parameters()
        return specs

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        delta = x
        for branch in self.branches:
            delta = ops.add(delta, branch.forward(x, store, tape))
        if self.attention is None:
            return delta
        return self.attention.forward(delta, store, tape)

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        g_delta = grad if self.attention is None else self.attention.backward(grad, store, tape, grads)
        gx = g_delta
        for branch in self.branches:
            gx = gx + branch.backward(g_delta, store, tape, grads)
        return gx

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes: List[NodeCost] = []
        for branch in self.branches:
            sub, _ = branch.costs(shape, itemsize)
            nodes.extend(sub)
        if self.branches:
            nodes.append(elementwise_node(f"{self.name}.sum", "add", shape, itemsize, len(self.branches)))
        if self.attention is not None:
            sub, _ = self.attention.costs(shape, itemsize)
            nodes.extend(sub)
        return nodes, shape
