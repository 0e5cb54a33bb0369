"""Lightweight multi-head attention over the pooled bottleneck tokens."""

from typing import Dict, List, Optional, Tuple

import numpy as np

from cfkit.blocks.base import Grads, Layer, ParamStore, Shape, Tape, elementwise_node, numel
from cfkit.blocks.layers import ConvBN
from cfkit.exceptions import ConfigurationError
from cfkit.tensor import ops
from cfkit.types import AttentionSpec, ConvSpec, NodeCost, ParamSpec


def _heads(x: np.ndarray, heads: int, d: int) -> np.ndarray:
    """(N, heads*d, H, W) -> (N, heads, T, d)."""
    n, _, h, w = x.shape
    return x.reshape(n, heads, d, h * w).transpose(0, 1, 3, 2)


def _merge(x: np.ndarray, h: int, w: int) -> np.ndarray:
    """(N, heads, T, d) -> (N, heads*d, H, W)."""
    n, heads, _, d = x.shape
    return np.ascontiguousarray(x.transpose(0, 1, 3, 2)).reshape(n, heads * d, h, w)


def attention_core(q: np.ndarray, k: np.ndarray, v: np.ndarray, spec: AttentionSpec) -> Tuple[np.ndarray, Dict]:
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated along channels.

    Returns the output and the cache needed by ``attention_core_backward``.
    """
    h, w = q.shape[2:]
    if h * w == 0:
        raise ConfigurationError("attention needs at least one token")
    qh = _heads(q, spec.num_heads, spec.q_dim)
    kh = _heads(k, spec.num_heads, spec.k_dim)
    vh = _heads(v, spec.num_heads, spec.v_dim)
    k_t = kh.transpose(0, 1, 3, 2)
    probs = ops.softmax_rows(ops.matmul(qh, k_t) * spec.scale)
    out = _merge(ops.matmul(probs, vh), h, w)
    return out, {"qh": qh, "k_t": k_t, "vh": vh, "probs": probs, "hw": (h, w)}


def attention_core_backward(grad: np.ndarray, cache: Dict, spec: AttentionSpec):
    """Gradients of ``attention_core`` with respect to q, k and v."""
    h, w = cache["hw"]
    g_out = _heads(grad, spec.num_heads, spec.v_dim)
    g_probs, g_vh = ops.matmul_backward(g_out, cache["probs"], cache["vh"])
    g_logits = ops.softmax_backward(g_probs, cache["probs"]) * spec.scale
    g_qh, g_kt = ops.matmul_backward(g_logits, cache["qh"], cache["k_t"])
    return _merge(g_qh, h, w), _merge(g_kt.transpose(0, 1, 3, 2), h, w), _merge(g_vh, h, w)


class LightweightAttention(Layer):
    """X + BN(proj(ReLU6(concat_h softmax(Q_h K_h^T / sqrt(d_k)) V_h))).

    Q, K and V are 1x1 conv + BN projections with per-head widths. No positional encoding.
    """

    def __init__(self, name: str, spec: AttentionSpec):
        super().__init__(name)
        self.spec = spec
        c, nh = spec.dim, spec.num_heads
        self.q = ConvBN(f"{name}.q", ConvSpec.pointwise(c, nh * spec.q_dim))
        self.k = ConvBN(f"{name}.k", ConvSpec.pointwise(c, nh * spec.k_dim))
        self.v = ConvBN(f"{name}.v", ConvSpec.pointwise(c, nh * spec.v_dim))
        self.proj = ConvBN(f"{name}.proj", ConvSpec.pointwise(nh * spec.v_dim, c))

    def parameters(self) -> List[ParamSpec]:
        return [p for layer in (self.q, self.k, self.v, self.proj) for p in layer.parameters()]

    def forward(self, x: np.ndarray, store: ParamStore, tape: Optional[Tape] = None) -> np.ndarray:
        q = self.q.forward(x, store, tape)
        k = self.k.forward(x, store, tape)
        v = self.v.forward(x, store, tape)
        heads, cache = attention_core(q, k, v, self.spec)
        if tape is not None:
            tape.note_clamp(heads)
            tape.save(self.name, cache=cache, heads=heads)
        return ops.add(x, self.proj.forward(ops.relu6(heads), store, tape))

    def backward(self, grad: np.ndarray, store: ParamStore, tape: Tape, grads: Grads) -> np.ndarray:
        rec = tape.load(self.name)
        g_heads = ops.relu6_backward(self.proj.backward(grad, store, tape, grads), rec["heads"])
        g_q, g_k, g_v = attention_core_backward(g_heads, rec["cache"], self.spec)
        gx = grad + self.q.backward(g_q, store, tape, grads)
        gx = gx + self.k.backward(g_k, store, tape, grads)
        return gx + self.v.backward(g_v, store, tape, grads)

    def costs(self, shape: Shape, itemsize: int) -> Tuple[List[NodeCost], Shape]:
        nodes: List[NodeCost] = []
        for layer in (self.q, self.k, self.v):
            sub, _ = layer.costs(shape, itemsize)
            nodes.extend(sub)
        n, _, h, w = shape
        t = h * w
        s = self.spec
        heads_shape = (n, s.num_heads * s.v_dim, h, w)
        # QK^T plus AV; softmax and ReLU6 as minor ops
        nodes.append(
            NodeCost(
                name=f"{self.name}.core",
                kind="attention",
                macs=n * s.num_heads * t * t * (s.q_dim + s.v_dim),
                minor_ops=n * s.num_heads * t * t + numel(heads_shape),
                act_bytes=(n * s.num_heads * t * t + numel(heads_shape)) * itemsize,
                output_shape=list(heads_shape),
            )
        )
        sub, _ = self.proj.costs(heads_shape, itemsize)
        nodes.extend(sub)
        nodes.append(elementwise_node(f"{self.name}.add", "add", shape, itemsize))
        return nodes, shape
