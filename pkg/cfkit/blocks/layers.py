"""Primitive layers: convolution with optional BN/activation, and linear."""

from typing import List, Literal, Optional, Tuple

import numpy as np

from cfkit.blocks.base import Grads, Layer, ParamStore, Shape, Tape, accumulate, numel
from cfkit.exceptions import ConfigurationError
from cfkit.tensor import ops
from cfkit.types import BatchNormParams, ConvSpec, NodeCost, ParamSpec

Activation = Optional[Literal["relu6", "sigmoid"]]


def _activate(u: np.ndarray, act: Activation, tape: Optional[Tape]) -> np.ndarray:
    if act == "relu6":
        if tape is not None:
            tape.note_clamp(u)
        return ops.relu6(u)
    if act == "sigmoid":
        return ops.sigmoid(u)
    return u


def _activate_backward(grad: np.ndarray, act: Activation, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    if act == "relu6":
        return ops.relu6_backward(grad, u)
    if act == "sigmoid":
        return ops.sigmoid_backward(grad, y)
    return grad


class ConvBN(Layer):
    """conv -> [+bias] -> [BN] -> [activation].

    Parameters: ``<name>.weight``, ``<name>.bias``, ``<name>.bn.weight``,
    ``<name>.bn.bias``. BN running statistics are fixed buffers (mean 0,
    variance 1) and are not part of the ParamStore.
    """

    def __init__(
        self,
        name: str,
        spec: ConvSpec,
        bn: bool = True,
        act: Activation = None,
        bias: bool = False,
        eps: float = 1e-5,
    ):
        super().__init__(name)
        self.spec = spec
        self.bn = bn
        self.act = act
        self.bias = bias
        self.eps = eps
        self.running_mean = np.zeros(spec.out_channels)
        self.running_var = np.ones(spec.out_channels)

    def parameters(self) -> List[ParamSpec]:
        kh, kw = self.spec.kernel
        specs = [
            ParamSpec(
                name=f"{self.name}.weight",
                shape=self.spec.weight_shape,
                fan_in=self.spec.in_per_group * kh * kw,
            )
        ]
        c = self.spec.out_channels
        if self.bias:
            specs.append(ParamSpec(name=f"{self.name}.bias", shape=(c,), init="zeros"))
        if self.bn:
            specs.append(ParamSpec(name=f"{self.name}.bn.weight", shape=(c,), init="ones"))
            specs.append(ParamSpec(name=f"{self.name}.bn.bias", shape=(c,), init="zeros"))
        return specs

    def bn_params(self, store: ParamStore) -> BatchNormParams:
        return BatchNormParams(
            gamma=store[f"{self.name}.bn.weight"],
            beta=store[f"{self.name}.bn.bias"],
            mean=self.running_mean,
            var=self.running_var,
            eps=self.eps,
        )

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        z = ops.conv2d(x, store[f"{self.name}.weight"], self.spec)
        if self.bias:
            z = z + store[f"{self.name}.bias"][:, None, None]
        u = ops.batchnorm_infer(z, self.bn_params(store)) if self.bn else z
        y = _activate(u, self.act, tape)
        if tape is not None:
            tape.save(self.name, x=x, z=z, u=u, y=y)
        return y

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        rec = tape.load(self.name)
        g = _activate_backward(grad, self.act, rec["u"], rec["y"])
        if self.bn:
            g, g_gamma, g_beta = ops.batchnorm_backward(g, rec["z"], self.bn_params(store))
            accumulate(grads, f"{self.name}.bn.weight", g_gamma)
            accumulate(grads, f"{self.name}.bn.bias", g_beta)
        if self.bias:
            accumulate(grads, f"{self.name}.bias", g.sum(axis=(0, 2, 3)))
        gx, gw = ops.conv2d_backward(g, rec["x"], store[f"{self.name}.weight"], self.spec)
        accumulate(grads, f"{self.name}.weight", gw)
        return gx

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        n, c, h, w = shape
        if c != self.spec.in_channels:
            raise ConfigurationError(
                f"{self.name}: input has {c} channels, expected {self.spec.in_channels}", field="in_channels"
            )
        oh, ow = self.spec.output_hw(h, w)
        out = (n, self.spec.out_channels, oh, ow)
        size = numel(out)
        kh, kw = self.spec.kernel
        act_ops = size if self.act else 0
        conv_params = numel(self.spec.weight_shape) + (self.spec.out_channels if self.bias else 0)

        conv = NodeCost(
            name=self.name,
            kind=f"{self.spec.kind}_conv{kh}x{kw}",
            params=conv_params,
            macs=kh * kw * self.spec.in_per_group * size,
            minor_ops=(size if self.bias else 0) + (0 if self.bn else act_ops),
            act_bytes=size * itemsize,
            output_shape=list(out),
        )
        if not self.bn:
            if self.act:
                conv.kind += f"+{self.act}"
            return [conv], out
        bn = NodeCost(
            name=f"{self.name}.bn",
            kind="batchnorm" + (f"+{self.act}" if self.act else ""),
            params=2 * self.spec.out_channels,
            minor_ops=size + act_ops,
            act_bytes=size * itemsize,
            output_shape=list(out),
        )
        return [conv, bn], out


class Linear(Layer):
    """Row-wise affine map on (N, in) with an optional activation."""

    def __init__(self, name: str, in_features: int, out_features: int, act: Activation = None):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.act = act

    def parameters(self) -> List[ParamSpec]:
        return [
            ParamSpec(name=f"{self.name}.weight", shape=(self.out_features, self.in_features), fan_in=self.in_features),
            ParamSpec(name=f"{self.name}.bias", shape=(self.out_features,), init="zeros"),
        ]

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        u = ops.linear(x, store[f"{self.name}.weight"], store[f"{self.name}.bias"])
        y = _activate(u, self.act, tape)
        if tape is not None:
            tape.save(self.name, x=x, u=u, y=y)
        return y

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        rec = tape.load(self.name)
        g = _activate_backward(grad, self.act, rec["u"], rec["y"])
        gx, gw, gb = ops.linear_backward(g, rec["x"], store[f"{self.name}.weight"])
        accumulate(grads, f"{self.name}.weight", gw)
        accumulate(grads, f"{self.name}.bias", gb)
        return gx

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        n = shape[0]
        out = (n, self.out_features)
        size = numel(out)
        node = NodeCost(
            name=self.name,
            kind="linear" + (f"+{self.act}" if self.act else ""),
            params=self.in_features * self.out_features + self.out_features,
            macs=n * self.in_features * self.out_features,
            minor_ops=size * (2 if self.act else 1),
            act_bytes=size * itemsize,
            output_shape=list(out),
        )
        return [node], out
