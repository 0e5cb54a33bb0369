"""The assembled ContextFormer graph."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from cfkit.blocks.base import Grads, Module, ParamStore, Sequential, Shape, Tape, accumulate
from cfkit.blocks.ffn import build_trans_bdc
from cfkit.blocks.fmm import FeatureMerge
from cfkit.blocks.heads import ClsHead, SegHead
from cfkit.blocks.tpem import FeaturePyramid, TokenPyramid, build_stem, stem_channels
from cfkit.exceptions import ConfigurationError
from cfkit.types import ModelConfig, NodeCost, ParamSpec

logger = logging.getLogger(__name__)

MODULES = ("stem", "tpem", "trans_bdc", "fmm", "heads")


class ForwardResult(BaseModel):
    """Every intermediate value of one forward pass."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    stem: np.ndarray
    pyramid: Optional[FeaturePyramid] = None
    bottleneck: Optional[np.ndarray] = None
    merged: List[np.ndarray] = []
    output: np.ndarray
    input_hw: Tuple[int, int] = (0, 0)


class ContextFormer(Module):
    """Stem -> TPEM -> Trans-BDC -> (FMM -> segmentation head | classification head).

    The FMM local inputs are x_f and the pyramid taps from the coarsest down to
    the second finest; the finest tap only feeds the pooled tokens.
    """

    def __init__(self, config: ModelConfig):
        super().__init__("contextformer")
        self.config = config
        self.stem: Sequential = build_stem(config)
        self.tpem: Optional[TokenPyramid] = None
        self.trans_bdc: Optional[Sequential] = None
        self.fmm: Optional[FeatureMerge] = None
        self.seg_head: Optional[SegHead] = None
        self.cls_head: Optional[ClsHead] = None

        if config.tpem_stages:
            self.tpem = TokenPyramid(config, stem_channels(config))
            attention = config.attention_spec()
            self.trans_bdc = build_trans_bdc(attention, config.trans_bdc)
            width = config.width
            if config.head == "seg":
                taps = config.tap_channels
                local_channels = [width] + taps[::-1][:-1]
                self.fmm = FeatureMerge(local_channels, width, config.fmm_target_channels)
                self.seg_head = SegHead(config.fmm_target_channels, config.num_classes, len(local_channels))
            elif config.head == "cls":
                self.cls_head = ClsHead(width, config.num_classes)

    @property
    def parts(self) -> List[Module]:
        """Submodules in graph construction order."""
        return [
            m
            for m in (self.stem, self.tpem, self.trans_bdc, self.fmm, self.seg_head, self.cls_head)
            if m is not None
        ]

    def parameters(self) -> List[ParamSpec]:
        return [p for part in self.parts for p in part.parameters()]

    def init_params(self, seed: int, dtype=np.float32) -> ParamStore:
        return ParamStore.initialize(self.parameters(), seed, dtype)

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise ConfigurationError(f"model input must be NCHW, got shape {x.shape}")
        if x.shape[1] != self.config.input_channels:
            raise ConfigurationError(
                f"input has {x.shape[1]} channels but config.input_channels={self.config.input_channels}",
                field="input_channels",
            )
        h, w = x.shape[2:]
        stride = self.config.encoder_stride
        if h % stride or w % stride:
            raise ConfigurationError(f"input {h}x{w} is not a multiple of the encoder stride {stride}", field="input_h")
        if self.tpem is not None and self.config.head != "cls":
            pd = self.config.pool_divisor
            if h % pd or w % pd:
                raise ConfigurationError(f"input {h}x{w} is not a multiple of pool_divisor {pd}", field="pool_divisor")

    def local_inputs(self, pyramid: FeaturePyramid) -> List[np.ndarray]:
        return [pyramid.x_f] + pyramid.taps[::-1][:-1]

    def run(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> ForwardResult:
        self.check_input(x)
        x = x.astype(store.dtype, copy=False)
        s = self.stem.forward(x, store, tape)
        input_hw = (int(x.shape[2]), int(x.shape[3]))
        if self.tpem is None:
            return ForwardResult(stem=s, output=s, input_hw=input_hw)
        pyramid = self.tpem.forward(s, store, tape, input_hw=input_hw)
        return self._finish(s, pyramid, store, tape, input_hw)

    def _finish(
        self,
        s: np.ndarray,
        pyramid: FeaturePyramid,
        store: ParamStore,
        tape: Optional[Tape],
        input_hw: Tuple[int, int],
        bottleneck: Optional[np.ndarray] = None,
        merged: Optional[List[np.ndarray]] = None,
    ) -> ForwardResult:
        """Everything after the TPEM; cached ``bottleneck`` or ``merged`` values are reused when given."""
        if bottleneck is None:
            bottleneck = self.trans_bdc.forward(pyramid.x_f, store, tape)
        common = dict(stem=s, pyramid=pyramid, bottleneck=bottleneck, input_hw=input_hw)
        if self.fmm is not None:
            if merged is None:
                merged = self.fmm.forward(self.local_inputs(pyramid), bottleneck, store, tape)
            logits = self.seg_head.forward(merged, store, tape)
            return ForwardResult(merged=merged, output=logits, **common)
        if self.cls_head is not None:
            return ForwardResult(output=self.cls_head.forward(bottleneck, store, tape), **common)
        return ForwardResult(output=bottleneck, **common)

    def resume(self, base: ForwardResult, start: str, store: ParamStore, tape: Optional[Tape] = None) -> ForwardResult:
        """Recompute a forward pass from ``start`` onwards, reusing the values of ``base`` before it.

        ``start`` is a top-level part ("tpem", "trans_bdc", "fmm", "heads") or a
        single TPEM stage ("tpem.stage2"). Only the recomputed part writes to
        ``tape``. Use :meth:`run` when the stem itself changes.
        """
        if self.tpem is None or base.pyramid is None:
            raise ConfigurationError("resume needs a model with a TPEM and a full forward result", field="start")
        pyramid = base.pyramid
        if start == "tpem" or start.startswith("tpem.stage"):
            suffix = start[len("tpem.stage"):] if start != "tpem" else "1"
            index = int(suffix) - 1 if suffix.isdigit() else -1
            if not 0 <= index < len(self.tpem.stages):
                raise ConfigurationError(f"unknown TPEM stage '{start}'", field="start")
            x = base.stem if index == 0 else pyramid.taps[index - 1]
            pyramid = self.tpem.forward(
                x, store, tape, input_hw=base.input_hw, start=index, earlier=pyramid.taps[:index]
            )
            return self._finish(base.stem, pyramid, store, tape, base.input_hw)
        if start == "trans_bdc":
            return self._finish(base.stem, pyramid, store, tape, base.input_hw)
        if start == "fmm":
            return self._finish(base.stem, pyramid, store, tape, base.input_hw, bottleneck=base.bottleneck)
        if start == "heads":
            merged = base.merged if self.fmm is not None else None
            return self._finish(base.stem, pyramid, store, tape, base.input_hw, base.bottleneck, merged)
        raise ConfigurationError(f"cannot resume a forward pass at '{start}'", field="start")

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        return self.run(x, store, tape).output

    def backward(self, grad_output: np.ndarray, store: ParamStore, tape: Tape) -> Dict[str, np.ndarray]:
        """Gradients of every parameter given the gradient of the model output."""
        grads: Grads = {}
        if self.tpem is None:
            self.stem.backward(grad_output, store, tape, grads)
            return self._complete(grads, store)

        n_taps = len(self.tpem.stages)
        grad_taps: List[Optional[np.ndarray]] = [None] * n_taps
        grad_x_f: Optional[np.ndarray] = None
        if self.fmm is not None:
            g_merged = self.seg_head.backward(grad_output, store, tape, grads)
            g_locals, g_bottleneck = self.fmm.backward(g_merged, store, tape, grads)
            grad_x_f = g_locals[0]
            # local scale i >= 1 is tap n_taps - i
            for i, g in enumerate(g_locals[1:], start=1):
                grad_taps[n_taps - i] = g
        elif self.cls_head is not None:
            g_bottleneck = self.cls_head.backward(grad_output, store, tape, grads)
        else:
            g_bottleneck = grad_output

        g = self.trans_bdc.backward(g_bottleneck, store, tape, grads)
        grad_x_f = g if grad_x_f is None else grad_x_f + g
        g_stem = self.tpem.backward(grad_taps, grad_x_f, store, tape, grads)
        self.stem.backward(g_stem, store, tape, grads)
        return self._complete(grads, store)

    def _complete(self, grads: Grads, store: ParamStore) -> Dict[str, np.ndarray]:
        """Ordered like the store; parameters the output does not reach get zeros."""
        out = {}
        for name, value in store.items():
            if name not in grads:
                accumulate(grads, name, np.zeros_like(value))
            out[name] = grads[name]
        return out

    def costs(self, input_shape: Shape, itemsize: int = 4) -> List[NodeCost]:
        """Static costs of every node for an NCHW input shape."""
        if len(input_shape) != 4:
            raise ConfigurationError(f"input shape must have four extents, got {input_shape}")
        empty = np.empty((0,) + tuple(input_shape[1:]))
        self.check_input(empty)
        nodes, shape = self.stem.costs(tuple(input_shape), itemsize)
        if self.tpem is None:
            return nodes
        sub, tokens = self.tpem.costs(shape, itemsize, input_hw=tuple(input_shape[2:]))
        nodes += sub
        sub, bottleneck = self.trans_bdc.costs(tokens, itemsize)
        nodes += sub
        if self.fmm is not None:
            taps = self._tap_shapes(input_shape)
            local_shapes = [tokens] + taps[::-1][:-1]
            nodes += self.fmm.costs(local_shapes, bottleneck, itemsize)
            merged = [(s[0], self.config.fmm_target_channels, s[2], s[3]) for s in local_shapes]
            sub, _ = self.seg_head.costs(merged, itemsize)
            nodes += sub
        elif self.cls_head is not None:
            sub, _ = self.cls_head.costs(bottleneck, itemsize)
            nodes += sub
        return nodes

    def _tap_shapes(self, input_shape: Shape) -> List[Shape]:
        n, _, h, w = input_shape
        return [
            (n, c, h // s, w // s) for c, s in zip(self.config.tap_channels, self.config.tap_strides)
        ]

    def output_shape(self, input_shape: Shape) -> Tuple[int, ...]:
        nodes = self.costs(input_shape)
        return tuple(nodes[-1].output_shape)
