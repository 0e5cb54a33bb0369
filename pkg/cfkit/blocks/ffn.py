"""Depthwise feed-forward network and the Trans-BDC bottleneck block."""

from typing import List, Optional, Tuple

import numpy as np

from cfkit.blocks.attention import LightweightAttention
from cfkit.blocks.base import Grads, Layer, ParamStore, Sequential, Shape, Tape, elementwise_node
from cfkit.blocks.bdc import BranchedDepthwise
from cfkit.blocks.layers import ConvBN
from cfkit.tensor import ops
from cfkit.types import AttentionSpec, ConvSpec, NodeCost, ParamSpec, TransBDCSpec


class FeedForward(Layer):
    """1x1 expand -> 3x3 depthwise -> 1x1 project, each with BN, plus a skip."""

    def __init__(self, name: str, channels: int, expansion: int):
        super().__init__(name)
        hidden = channels * expansion
        self.body = Sequential(
            name,
            [
                ConvBN(f"{name}.expand", ConvSpec.pointwise(channels, hidden), act="relu6"),
                ConvBN(f"{name}.dw", ConvSpec.depthwise(hidden, 3), act="relu6"),
                ConvBN(f"{name}.project", ConvSpec.pointwise(hidden, channels)),
            ],
        )

    def parameters(self) -> List[ParamSpec]:
        return self.body.parameters()

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        return ops.add(x, self.body.forward(x, store, tape))

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        return grad + self.body.backward(grad, store, tape, grads)

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes, _ = self.body.costs(shape, itemsize)
        nodes.append(elementwise_node(f"{self.name}.add", "add", shape, itemsize))
        return nodes, shape


class TransBDCBlock(Layer):
    """X' = BDC(X) + ViT(X); X'' = FFN(X') + X'.

    With one branch disabled X' is the other branch; with both disabled X' = X.
    """

    def __init__(self, name: str, attention: AttentionSpec, spec: TransBDCSpec):
        super().__init__(name)
        self.bdc = BranchedDepthwise(f"{name}.bdc", attention.dim, spec) if spec.use_bdc else None
        self.attn = LightweightAttention(f"{name}.attn", attention) if spec.use_attention else None
        self.ffn = FeedForward(f"{name}.ffn", attention.dim, spec.ffn_expansion)

    @property
    def branches(self) -> List[Layer]:
        return [b for b in (self.bdc, self.attn) if b is not None]

    def parameters(self) -> List[ParamSpec]:
        return [p for layer in self.branches + [self.ffn] for p in layer.parameters()]

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        outputs = [b.forward(x, store, tape) for b in self.branches]
        if not outputs:
            fused = x
        elif len(outputs) == 1:
            fused = outputs[0]
        else:
            fused = ops.add(outputs[0], outputs[1])
        return self.ffn.forward(fused, store, tape)

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        g_fused = self.ffn.backward(grad, store, tape, grads)
        if not self.branches:
            return g_fused
        gx = None
        for branch in self.branches:
            g = branch.backward(g_fused, store, tape, grads)
            gx = g if gx is None else gx + g
        return gx

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes: List[NodeCost] = []
        for branch in self.branches:
            sub, _ = branch.costs(shape, itemsize)
            nodes.extend(sub)
        if len(self.branches) == 2:
            nodes.append(elementwise_node(f"{self.name}.fuse", "add", shape, itemsize))
        sub, _ = self.ffn.costs(shape, itemsize)
        return nodes + sub, shape


def build_trans_bdc(attention: AttentionSpec, spec: TransBDCSpec) -> Sequential:
    return Sequential(
        "trans_bdc",
        [TransBDCBlock(f"trans_bdc.block{i}", attention, spec) for i in range(spec.num_blocks)],
    )
