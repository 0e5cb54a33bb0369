"""Oracle-checked operators: random samplers plus optimized and naive paths."""

from typing import Any, Tuple

import numpy as np

from cfkit.blocks.attention import attention_core
from cfkit.registry import register_operator
from cfkit.tensor import ops, reference
from cfkit.types import AttentionSpec, BatchNormParams, ConvSpec
from cfkit.verify.base import OracleOperator, draw


def _nchw(rng: np.random.Generator, lo: int = 1, hi: int = 6, min_hw: int = 1, max_hw: int = 9):
    return (
        int(rng.integers(1, 3)),
        int(rng.integers(lo, hi + 1)),
        int(rng.integers(min_hw, max_hw + 1)),
        int(rng.integers(min_hw, max_hw + 1)),
    )


@register_operator("conv2d")
class Conv2dOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian") -> Tuple[Any, ...]:
        kind = ("dense", "depthwise", "pointwise")[int(rng.integers(0, 3))]
        n, c, _, _ = _nchw(rng, hi=8)
        if kind == "pointwise":
            k, pad = 1, 0
        else:
            k = int(rng.choice([1, 3, 5]))
            pad = int(rng.integers(0, k // 2 + 1))
        stride = int(rng.integers(1, 3))
        h, w = int(rng.integers(k, 11)), int(rng.integers(k, 11))
        c_out = c if kind == "depthwise" else int(rng.integers(1, 9))
        spec = ConvSpec(kind=kind, kernel=(k, k), stride=stride, padding=pad, in_channels=c, out_channels=c_out)
        fan_in = spec.in_per_group * k * k
        x = draw(rng, (n, c, h, w), dtype, values)
        return x, draw(rng, spec.weight_shape, dtype, values, sd=0.5 / np.sqrt(fan_in)), spec

    def optimized(self, x, w, spec):
        return ops.conv2d(x, w, spec)

    def reference(self, x, w, spec):
        return reference.conv2d(x, w, spec)


@register_operator("batchnorm_infer")
class BatchNormOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        shape = _nchw(rng)
        c = shape[1]
        params = BatchNormParams(
            gamma=draw(rng, (c,), dtype, values),
            beta=draw(rng, (c,), dtype, values),
            mean=draw(rng, (c,), dtype, values),
            var=rng.uniform(0.25, 4.0, size=c).astype(dtype),
            eps=1e-5,
        )
        return draw(rng, shape, dtype, values, limit=8), params

    def optimized(self, x, params):
        return ops.batchnorm_infer(x, params)

    def reference(self, x, params):
        return reference.batchnorm_infer(x, params)


@register_operator("relu6")
class Relu6Operator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        return (draw(rng, _nchw(rng), dtype, values, limit=64, sd=4.0),)

    def optimized(self, x):
        return ops.relu6(x)

    def reference(self, x):
        return reference.relu6(x)


@register_operator("sigmoid")
class SigmoidOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        return (draw(rng, _nchw(rng), dtype, values, limit=64, sd=4.0),)

    def optimized(self, x):
        return ops.sigmoid(x)

    def reference(self, x):
        return reference.sigmoid(x)


@register_operator("softmax_rows")
class SoftmaxOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        rows, cols = int(rng.integers(1, 9)), int(rng.integers(1, 65))
        return (draw(rng, (rows, cols), dtype, values, limit=32),)

    def optimized(self, m):
        return ops.softmax_rows(m)

    def reference(self, m):
        return reference.softmax_rows(m)


@register_operator("avg_pool")
class AvgPoolOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        n, c, oh, ow = _nchw(rng, max_hw=4)
        fh, fw = int(rng.choice([1, 2, 4])), int(rng.choice([1, 2, 4]))
        return draw(rng, (n, c, oh * fh, ow * fw), dtype, values), oh, ow

    def optimized(self, x, oh, ow):
        return ops.avg_pool(x, oh, ow)

    def reference(self, x, oh, ow):
        return reference.avg_pool(x, oh, ow)


@register_operator("adaptive_avg_pool")
class AdaptivePoolOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        shape = _nchw(rng, min_hw=2, max_hw=10)
        oh, ow = int(rng.integers(1, shape[2] + 1)), int(rng.integers(1, shape[3] + 1))
        return draw(rng, shape, dtype, values), oh, ow

    def optimized(self, x, oh, ow):
        return ops.adaptive_avg_pool(x, oh, ow)

    def reference(self, x, oh, ow):
        return reference.adaptive_avg_pool(x, oh, ow)


@register_operator("global_avg_pool")
class GlobalPoolOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        return (draw(rng, _nchw(rng), dtype, values),)

    def optimized(self, x):
        return ops.global_avg_pool(x)

    def reference(self, x):
        return reference.global_avg_pool(x)


@register_operator("upsample_bilinear")
class UpsampleOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        shape = _nchw(rng, max_hw=6)
        oh = shape[2] * int(rng.integers(1, 5)) + int(rng.integers(0, 3))
        ow = shape[3] * int(rng.integers(1, 5)) + int(rng.integers(0, 3))
        return draw(rng, shape, dtype, values), oh, ow

    def optimized(self, x, oh, ow):
        return ops.upsample_bilinear(x, oh, ow)

    def reference(self, x, oh, ow):
        return reference.upsample_bilinear(x, oh, ow)


@register_operator("matmul")
class MatmulOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        m, k, n = (int(v) for v in rng.integers(1, 17, size=3))
        return draw(rng, (m, k), dtype, values), draw(rng, (k, n), dtype, values)

    def optimized(self, a, b):
        return ops.matmul(a, b)

    def reference(self, a, b):
        return reference.matmul(a, b)


@register_operator("linear")
class LinearOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        n, i, o = (int(v) for v in rng.integers(1, 17, size=3))
        return draw(rng, (n, i), dtype, values), draw(rng, (o, i), dtype, values), draw(rng, (o,), dtype, values)

    def optimized(self, x, w, b):
        return ops.linear(x, w, b)

    def reference(self, x, w, b):
        return reference.linear(x, w, b)


@register_operator("concat_channels")
class ConcatOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        n, _, h, w = _nchw(rng)
        parts = int(rng.integers(1, 5))
        return ([draw(rng, (n, int(rng.integers(1, 7)), h, w), dtype, values) for _ in range(parts)],)

    def optimized(self, xs):
        return ops.concat_channels(xs)

    def reference(self, xs):
        return reference.concat_channels(xs)


@register_operator("add")
class AddOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        shape = _nchw(rng)
        return draw(rng, shape, dtype, values), draw(rng, shape, dtype, values)

    def optimized(self, a, b):
        return ops.add(a, b)

    def reference(self, a, b):
        return reference.elementwise(a, b, "add")


@register_operator("hadamard")
class HadamardOperator(OracleOperator):
    def sample(self, rng, dtype, values="gaussian"):
        shape = _nchw(rng)
        return draw(rng, shape, dtype, values), draw(rng, shape, dtype, values)

    def optimized(self, a, b):
        return ops.hadamard(a, b)

    def reference(self, a, b):
        return reference.elementwise(a, b, "mul")


@register_operator("attention")
class AttentionOperator(OracleOperator):
    """Two tokens, 208 channels, four heads of 16/16/32."""

    spec = AttentionSpec()

    def sample(self, rng, dtype, values="gaussian"):
        s = self.spec
        x = draw(rng, (1, s.dim, 1, 2), dtype, values, limit=8)
        w = [
            draw(rng, (s.num_heads * d, s.dim), dtype, values, scale=64, limit=4, sd=1.0 / np.sqrt(s.dim))
            for d in (s.q_dim, s.k_dim, s.v_dim)
        ]
        return (x, *w)

    def optimized(self, x, wq, wk, wv):
        def project(w):
            spec = ConvSpec.pointwise(w.shape[1], w.shape[0])
            return ops.conv2d(x, w[:, :, None, None], spec)

        out, _ = attention_core(project(wq), project(wk), project(wv), self.spec)
        return out[0].reshape(out.shape[1], -1)

    def reference(self, x, wq, wk, wv):
        tokens = x[0].reshape(x.shape[1], -1)
        return reference.attention_tokens(tokens, wq, wk, wv, self.spec).astype(x.dtype)
