"""Naive scalar-loop references for every operator.

These are deliberately slow transcriptions of the textbook definitions. They
accumulate in Python floats (64-bit) and cast to the input dtype at the end.
"""

import math
from typing import List, Sequence

import numpy as np

from cfkit.types import AttentionSpec, BatchNormParams, ConvSpec


def conv2d(x: np.ndarray, w: np.ndarray, spec: ConvSpec) -> np.ndarray:
    n_b, c_in, h, wd = x.shape
    kh, kw = spec.kernel
    s, p = spec.stride, spec.padding
    oh, ow = spec.output_hw(h, wd)
    out = np.zeros((n_b, spec.out_channels, oh, ow), dtype=np.float64)
    for n in range(n_b):
        for o in range(spec.out_channels):
            in_range = [o] if spec.kind == "depthwise" else range(c_in)
            for y in range(oh):
                for xo in range(ow):
                    acc = 0.0
                    for g, c in enumerate(in_range):
                        wc = 0 if spec.kind == "depthwise" else g
                        for i in range(kh):
                            for j in range(kw):
                                yi = y * s + i - p
                                xj = xo * s + j - p
                                if 0 <= yi < h and 0 <= xj < wd:
                                    acc += float(w[o, wc, i, j]) * float(x[n, c, yi, xj])
                    out[n, o, y, xo] = acc
    return out.astype(x.dtype)


def batchnorm_infer(x: np.ndarray, params: BatchNormParams) -> np.ndarray:
    out = np.zeros(x.shape, dtype=np.float64)
    n_b, c_n, h, w = x.shape
    for c in range(c_n):
        denom = math.sqrt(float(params.var[c]) + params.eps)
        for n in range(n_b):
            for y in range(h):
                for xo in range(w):
                    out[n, c, y, xo] = (float(x[n, c, y, xo]) - float(params.mean[c])) / denom * float(
                        params.gamma[c]
                    ) + float(params.beta[c])
    return out.astype(x.dtype)


def relu6(x: np.ndarray) -> np.ndarray:
    flat = [min(max(float(v), 0.0), 6.0) for v in x.ravel()]
    return np.array(flat, dtype=np.float64).reshape(x.shape).astype(x.dtype)


def sigmoid(x: np.ndarray) -> np.ndarray:
    flat = []
    for v in x.ravel():
        v = float(v)
        flat.append(1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v)))
    return np.array(flat, dtype=np.float64).reshape(x.shape).astype(x.dtype)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    rows = m.reshape(-1, m.shape[-1])
    out = np.zeros(rows.shape, dtype=np.float64)
    for r in range(rows.shape[0]):
        peak = max(float(v) for v in rows[r])
        exps = [math.exp(float(v) - peak) for v in rows[r]]
        total = sum(exps)
        for k, e in enumerate(exps):
            out[r, k] = e / total
    return out.reshape(m.shape).astype(m.dtype)


def avg_pool(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n_b, c_n, h, w = x.shape
    kh, kw = h // out_h, w // out_w
    out = np.zeros((n_b, c_n, out_h, out_w), dtype=np.float64)
    for n in range(n_b):
        for c in range(c_n):
            for i in range(out_h):
                for j in range(out_w):
                    acc = 0.0
                    for a in range(kh):
                        for b in range(kw):
                            acc += float(x[n, c, i * kh + a, j * kw + b])
                    out[n, c, i, j] = acc / (kh * kw)
    return out.astype(x.dtype)


def adaptive_avg_pool(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n_b, c_n, h, w = x.shape
    out = np.zeros((n_b, c_n, out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            for n in range(n_b):
                for c in range(c_n):
                    acc = 0.0
                    for a in range(r0, r1):
                        for b in range(c0, c1):
                            acc += float(x[n, c, a, b])
                    out[n, c, i, j] = acc / ((r1 - r0) * (c1 - c0))
    return out.astype(x.dtype)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return avg_pool(x, 1, 1)


def _source(o: int, n_in: int, n_out: int) -> tuple:
    src = max((o + 0.5) * n_in / n_out - 0.5, 0.0)
    i0 = min(int(math.floor(src)), n_in - 1)
    return i0, min(i0 + 1, n_in - 1), src - i0


def upsample_bilinear(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    n_b, c_n, h, w = x.shape
    out = np.zeros((n_b, c_n, out_h, out_w), dtype=np.float64)
    for i in range(out_h):
        y0, y1, ly = _source(i, h, out_h)
        for j in range(out_w):
            x0, x1, lx = _source(j, w, out_w)
            for n in range(n_b):
                for c in range(c_n):
                    top = (1 - lx) * float(x[n, c, y0, x0]) + lx * float(x[n, c, y0, x1])
                    bottom = (1 - lx) * float(x[n, c, y1, x0]) + lx * float(x[n, c, y1, x1])
                    out[n, c, i, j] = (1 - ly) * top + ly * bottom
    return out.astype(x.dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = sum(float(a[i, k]) * float(b[k, j]) for k in range(a.shape[1]))
    return out.astype(a.dtype)


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (matmul(x, w.T).astype(np.float64) + b.astype(np.float64)).astype(x.dtype)


def concat_channels(xs: Sequence[np.ndarray]) -> np.ndarray:
    n_b, _, h, w = xs[0].shape
    total = sum(x.shape[1] for x in xs)
    out = np.zeros((n_b, total, h, w), dtype=xs[0].dtype)
    base = 0
    for x in xs:
        for c in range(x.shape[1]):
            out[:, base + c] = x[:, c]
        base += x.shape[1]
    return out


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    fa, fb = a.ravel(), b.ravel()
    flat: List[float] = []
    for u, v in zip(fa, fb):
        flat.append(float(u) + float(v) if op == "add" else float(u) * float(v))
    return np.array(flat, dtype=np.float64).reshape(a.shape).astype(a.dtype)


def attention_tokens(
    x: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    spec: AttentionSpec,
) -> np.ndarray:
    """Concatenated head outputs for one sample, computed token by token.

    ``x`` is (C, T); ``wq``/``wk``/``wv`` are (heads * d, C). Returns (heads * d_v, T).
    """
    tokens = x.shape[1]
    out = np.zeros((spec.num_heads * spec.v_dim, tokens), dtype=np.float64)
    for hd in range(spec.num_heads):
        q = [[sum(float(wq[hd * spec.q_dim + d, c]) * float(x[c, t]) for c in range(x.shape[0]))
              for t in range(tokens)] for d in range(spec.q_dim)]
        k = [[sum(float(wk[hd * spec.k_dim + d, c]) * float(x[c, t]) for c in range(x.shape[0]))
              for t in range(tokens)] for d in range(spec.k_dim)]
        v = [[sum(float(wv[hd * spec.v_dim + d, c]) * float(x[c, t]) for c in range(x.shape[0]))
              for t in range(tokens)] for d in range(spec.v_dim)]
        for i in range(tokens):
            logits = [sum(q[d][i] * k[d][j] for d in range(spec.q_dim)) * spec.scale for j in range(tokens)]
            peak = max(logits)
            exps = [math.exp(v_ - peak) for v_ in logits]
            total = sum(exps)
            for d in range(spec.v_dim):
                out[hd * spec.v_dim + d, i] = sum(exps[j] / total * v[d][j] for j in range(tokens))
    return out
