"""Feature merging: gated fusion of local pyramid features with global context."""

from typing import List, Optional, Sequence, Tuple

import numpy as np

from cfkit.blocks.base import Grads, Module, ParamStore, Shape, Tape, elementwise_node
from cfkit.blocks.layers import ConvBN
from cfkit.exceptions import ConfigurationError
from cfkit.tensor import ops
from cfkit.types import ConvSpec, NodeCost, ParamSpec


class FeatureMerge(Module):
    """Y_i = local_i(S_i) * sigmoid(up(gate(X''))) + up(add(X'')) at every scale.

    The global 1x1 projections are shared by all scales and evaluated at the
    bottleneck resolution; the bilinear upsample is applied afterwards, which
    equals projecting the upsampled tensor. Scales are ordered coarse to fine.
    """

    def __init__(self, local_channels: Sequence[int], global_channels: int, target: int):
        super().__init__("fmm")
        self.target = target
        self.locals = [
            ConvBN(f"fmm.scale{i}.local", ConvSpec.pointwise(c, target)) for i, c in enumerate(local_channels)
        ]
        self.gate = ConvBN("fmm.global_gate", ConvSpec.pointwise(global_channels, target), bn=False, bias=True)
        self.additive = ConvBN("fmm.global_add", ConvSpec.pointwise(global_channels, target))

    def parameters(self) -> List[ParamSpec]:
        specs = [p for layer in self.locals for p in layer.parameters()]
        return specs + self.gate.parameters() + self.additive.parameters()

    def forward(
        self,
        local_inputs: Sequence[np.ndarray],
        x_global: np.ndarray,
        store: ParamStore,
        tape: Optional[Tape] = None,
    ) -> List[np.ndarray]:
        if len(local_inputs) != len(self.locals):
            raise ConfigurationError(f"fmm expects {len(self.locals)} scales, got {len(local_inputs)}")
        z_gate = self.gate.forward(x_global, store, tape)
        z_add = self.additive.forward(x_global, store, tape)
        outputs, cache = [], []
        for layer, s in zip(self.locals, local_inputs):
            h, w = s.shape[2:]
            local = layer.forward(s, store, tape)
            gate = ops.sigmoid(ops.upsample_bilinear(z_gate, h, w))
            outputs.append(ops.add(ops.hadamard(local, gate), ops.upsample_bilinear(z_add, h, w)))
            cache.append((local, gate))
        if tape is not None:
            tape.save(self.name, cache=cache, global_hw=x_global.shape[2:])
        return outputs

    def backward(
        self,
        grad_outputs: Sequence[np.ndarray],
        store: ParamStore,
        tape: Tape,
        grads: Grads,
    ) -> Tuple[List[np.ndarray], np.ndarray]:
        """Gradients for the local inputs (same order) and for the global input."""
        rec = tape.load(self.name)
        gh, gw = rec["global_hw"]
        g_gate = None
        g_add = None
        local_grads = []
        for layer, (local, gate), g in zip(self.locals, rec["cache"], grad_outputs):
            local_grads.append(layer.backward(g * gate, store, tape, grads))
            gg = ops.upsample_bilinear_backward(ops.sigmoid_backward(g * local, gate), gh, gw)
            ga = ops.upsample_bilinear_backward(g, gh, gw)
            g_gate = gg if g_gate is None else g_gate + gg
            g_add = ga if g_add is None else g_add + ga
        g_global = self.gate.backward(g_gate, store, tape, grads)
        g_global = g_global + self.additive.backward(g_add, store, tape, grads)
        return local_grads, g_global

    def costs(self, local_shapes: Sequence[Shape], global_shape: Shape, itemsize: int) -> List[NodeCost]:
        nodes, _ = self.gate.costs(global_shape, itemsize)
        sub, _ = self.additive.costs(global_shape, itemsize)
        nodes = nodes + sub
        for i, (layer, shape) in enumerate(zip(self.locals, local_shapes)):
            sub, out = layer.costs(shape, itemsize)
            nodes.extend(sub)
            # two bilinear upsamples at 4 ops per output, then sigmoid, product and sum
            nodes.append(elementwise_node(f"fmm.scale{i}.upsample", "upsample_bilinear", out, itemsize, 8))
            nodes.append(elementwise_node(f"fmm.scale{i}.merge", "sigmoid+hadamard+add", out, itemsize, 3))
        return nodes
