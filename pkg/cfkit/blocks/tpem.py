"""Stem, inverted residual blocks and the token pyramid extractor."""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from cfkit.blocks.base import Grads, Layer, Module, ParamStore, Sequential, Shape, Tape, elementwise_node
from cfkit.blocks.layers import ConvBN
from cfkit.exceptions import ConfigurationError
from cfkit.tensor import ops
from cfkit.types import ConvSpec, InvertedResidualSpec, ModelConfig, NodeCost, ParamSpec

logger = logging.getLogger(__name__)


class InvertedResidual(Layer):
    """Expand 1x1 -> depthwise kxk -> project 1x1, with a skip when shapes allow.

    An expand ratio of 1 has no expand conv.
    """

    def __init__(self, name: str, in_channels: int, spec: InvertedResidualSpec):
        super().__init__(name)
        self.spec = spec
        self.in_channels = in_channels
        hidden = in_channels * spec.expand_ratio
        layers: List[Layer] = []
        if spec.expand_ratio != 1:
            layers.append(ConvBN(f"{name}.expand", ConvSpec.pointwise(in_channels, hidden), act="relu6"))
        layers.append(ConvBN(f"{name}.dw", ConvSpec.depthwise(hidden, spec.kernel, spec.stride), act="relu6"))
        layers.append(ConvBN(f"{name}.project", ConvSpec.pointwise(hidden, spec.out_channels)))
        self.body = Sequential(name, layers)
        self.residual = spec.has_residual(in_channels)

    def parameters(self) -> List[ParamSpec]:
        return self.body.parameters()

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        y = self.body.forward(x, store, tape)
        return ops.add(y, x) if self.residual else y

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        gx = self.body.backward(grad, store, tape, grads)
        return gx + grad if self.residual else gx

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes, out = self.body.costs(shape, itemsize)
        if self.residual:
            nodes.append(elementwise_node(f"{self.name}.add", "add", out, itemsize))
        return nodes, out


def build_stem(config: ModelConfig) -> Sequential:
    """``stem.conv`` followed by the stem inverted residual blocks."""
    s = config.stem
    layers: List[Layer] = [
        ConvBN("stem.conv", ConvSpec.dense(config.input_channels, s.out_channels, s.kernel, s.stride), act="relu6")
    ]
    channels = s.out_channels
    for j, block in enumerate(config.stem_blocks):
        layers.append(InvertedResidual(f"stem.block{j}", channels, block))
        channels = block.out_channels
    return Sequential("stem", layers)


def stem_channels(config: ModelConfig) -> int:
    if config.stem_blocks:
        return config.stem_blocks[-1].out_channels
    return config.stem.out_channels


class FeaturePyramid(BaseModel):
    """Pyramid taps (finest first) and the pooled, concatenated bottleneck tokens."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    taps: List[np.ndarray]
    x_f: np.ndarray

    def _tap(self, i: int) -> np.ndarray:
        if i >= len(self.taps):
            raise ConfigurationError(f"pyramid has {len(self.taps)} taps, no s{i + 1}")
        return self.taps[i]

    @property
    def s1(self) -> np.ndarray:
        return self._tap(0)

    @property
    def s2(self) -> np.ndarray:
        return self._tap(1)

    @property
    def s3(self) -> np.ndarray:
        return self._tap(2)

    @property
    def s4(self) -> np.ndarray:
        return self._tap(3)


def _pool(x: np.ndarray, th: int, tw: int) -> Tuple[np.ndarray, bool]:
    h, w = x.shape[2:]
    if h % th == 0 and w % tw == 0:
        return ops.avg_pool(x, th, tw), False
    return ops.adaptive_avg_pool(x, th, tw), True


class TokenPyramid(Module):
    """TPEM: stage-wise encoder whose stage outputs are pooled and concatenated.

    Each stage output is a pyramid tap. Taps are pooled to input / pool_divisor
    (floor) and concatenated along channels into ``x_f``.
    """

    def __init__(self, config: ModelConfig, in_channels: int):
        super().__init__("tpem")
        self.pool_divisor = config.pool_divisor
        self.stages: List[Sequential] = []
        channels = in_channels
        for i, stage in enumerate(config.tpem_stages):
            blocks: List[Layer] = []
            for j, block in enumerate(stage):
                blocks.append(InvertedResidual(f"tpem.stage{i + 1}.block{j}", channels, block))
                channels = block.out_channels
            self.stages.append(Sequential(f"tpem.stage{i + 1}", blocks))
        self.tap_channels = list(config.tap_channels)

    def parameters(self) -> List[ParamSpec]:
        return [p for stage in self.stages for p in stage.parameters()]

    def token_hw(self, h: int, w: int) -> Tuple[int, int]:
        th, tw = h // self.pool_divisor, w // self.pool_divisor
        if th < 1 or tw < 1:
            raise ConfigurationError(f"input {h}x{w} is smaller than pool_divisor {self.pool_divisor}", field="input_h")
        return th, tw

    def forward(
        self,
        x: np.ndarray,
        store: ParamStore,
        tape: Optional[Tape] = None,
        input_hw: Optional[Tuple[int, int]] = None,
        start: int = 0,
        earlier: Sequence[np.ndarray] = (),
    ) -> FeaturePyramid:
        """``x`` is the input of stage ``start`` (the stem output by default); ``input_hw`` the network input size.

        ``earlier`` holds the already computed taps of the stages before ``start``.
        """
        if input_hw is None:
            raise ConfigurationError("tpem forward needs the network input size")
        if len(earlier) != start:
            raise ConfigurationError(f"resuming at stage {start} needs {start} earlier taps, got {len(earlier)}")
        th, tw = self.token_hw(*input_hw)
        taps = list(earlier)
        for stage in self.stages[start:]:
            x = stage.forward(x, store, tape)
            taps.append(x)
        pooled = []
        adaptive = []
        for tap in taps:
            p, is_adaptive = _pool(tap, th, tw)
            pooled.append(p)
            adaptive.append(is_adaptive)
        x_f = ops.concat_channels(pooled)
        if tape is not None:
            tape.save(self.name, tap_hw=[t.shape[2:] for t in taps], adaptive=adaptive)
        return FeaturePyramid(taps=taps, x_f=x_f)

    def backward(
        self,
        grad_taps: Sequence[Optional[np.ndarray]],
        grad_x_f: np.ndarray,
        store: ParamStore,
        tape: Tape,
        grads: Grads,
    ) -> np.ndarray:
        """Gradient with respect to the stem output."""
        rec = tape.load(self.name)
        pooled_grads = ops.split_channels(grad_x_f, self.tap_channels)
        grad: Optional[np.ndarray] = None
        for i in reversed(range(len(self.stages))):
            h, w = rec["tap_hw"][i]
            if rec["adaptive"][i]:
                g = ops.adaptive_avg_pool_backward(pooled_grads[i], h, w)
            else:
                g = ops.avg_pool_backward(pooled_grads[i], h, w)
            if grad_taps[i] is not None:
                g = g + grad_taps[i]
            if grad is not None:
                g = g + grad
            grad = self.stages[i].backward(g, store, tape, grads)
        return grad

    def costs(self, shape: Shape, itemsize: int, input_hw: Tuple[int, int]) -> Tuple[List[NodeCost], Shape]:
        th, tw = self.token_hw(*input_hw)
        nodes: List[NodeCost] = []
        for i, stage in enumerate(self.stages):
            sub, shape = stage.costs(shape, itemsize)
            nodes.extend(sub)
            pooled = (shape[0], shape[1], th, tw)
            # every input element is summed once
            node = elementwise_node(f"tpem.pool{i + 1}", "avg_pool", pooled, itemsize)
            node.minor_ops = int(np.prod(shape, dtype=np.int64))
            nodes.append(node)
        out = (shape[0], sum(self.tap_channels), th, tw)
        nodes.append(elementwise_node("tpem.concat", "concat", out, itemsize, ops_per_element=0))
        return nodes, out
