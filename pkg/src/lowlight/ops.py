"""Differentiable operators over channel-last tensors.

Each function computes its forward result with numpy and registers a
closure returning input gradients on the active tape. Only the operator
set the restoration network needs is provided.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tensor import Tensor, as_tensor, make_result

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _const(b, a)
    b = as_tensor(b)
    return _const(a, b), b


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting rules)
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_result(out, (a, b), bw)


def pow_scalar(x: Tensor, p: float) -> Tensor:
    """x**p for positive x."""
    out = np.power(x.data, p)

    def bw(g):
        return (g * p * np.power(x.data, p - 1.0),)

    return make_result(out, (x,), bw)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    mask = x.data > lo

    def bw(g):
        return (g * mask,)

    return make_result(np.where(mask, x.data, lo).astype(x.data.dtype), (x,), bw)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    def bw(g):
        return (g * np.sign(x.data),)

    return make_result(np.abs(x.data), (x,), bw)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def bw(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), bw)


def mean(x: Tensor, axis=None) -> Tensor:
    """Mean over ``axis`` (None for all elements)."""
    axes = tuple(range(x.ndim)) if axis is None else ((axis,) if isinstance(axis, int) else tuple(axis))
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)

    def bw(g):
        g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(np.asarray(out, dtype=x.data.dtype), (x,), bw)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average pool: (H, W, C) -> (C,)."""
    return mean(x, axis=(0, 1))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def bw(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Select channels [start, stop) along the trailing axis."""

    def bw(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return make_result(x.data[..., start:stop].copy(), (x,), bw)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(H, W, C) -> (H/r, W/r, C*r*r); channel index is c*r*r + dy*r + dx."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_unshuffle expects (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if r < 1 or h % r or w % r:
        raise ShapeError(f"factor {r} must divide spatial extents {h}x{w}")
    out = x.data.reshape(h // r, r, w // r, r, c).transpose(0, 2, 4, 1, 3).reshape(h // r, w // r, c * r * r)

    def bw(g):
        return (_shuffle(g, r),)

    return make_result(np.ascontiguousarray(out), (x,), bw)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    h, w, c = a.shape
    co = c // (r * r)
    out = a.reshape(h, w, co, r, r).transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, co)
    return np.ascontiguousarray(out)


def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    h, w, c = a.shape
    out = a.reshape(h // r, r, w // r, r, c).transpose(0, 2, 4, 1, 3).reshape(h // r, w // r, c * r * r)
    return np.ascontiguousarray(out)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(H, W, C) -> (H*r, W*r, C/(r*r)); exact inverse of :func:`pixel_unshuffle`."""
    if x.ndim != 3:
        raise ShapeError(f"pixel_shuffle expects (H, W, C), got {x.shape}")
    if r < 1 or x.shape[2] % (r * r):
        raise ShapeError(f"r*r={r * r} must divide channel extent {x.shape[2]}")

    def bw(g):
        return (_unshuffle(g, r),)

    return make_result(_shuffle(x.data, r), (x,), bw)


# ---------------------------------------------------------------------------
# learned linear maps
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: x @ weight + bias."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    flat = x.data.reshape(-1, weight.shape[0])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[1],))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = flat.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, inputs, bw)


def conv1x1(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Pointwise convolution (H, W, Cin) -> (H, W, Cout)."""
    if x.ndim != 3:
        raise ShapeError(f"conv1x1 expects (H, W, C), got {x.shape}")
    return linear(x, weight, bias)


def dwconv3x3(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Depth-wise 3x3 cross-correlation with one pixel of zero padding."""
    if x.ndim != 3:
        raise ShapeError(f"dwconv3x3 expects (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if kernel.shape != (3, 3, c) or bias.shape != (c,):
        raise ShapeError(f"dwconv3x3: kernel {kernel.shape} / bias {bias.shape} do not fit {c} channels")
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    k = kernel.data
    out = np.empty_like(x.data)
    out[...] = bias.data
    for i in range(3):
        for j in range(3):
            out += xp[i:i + h, j:j + w] * k[i, j]

    def bw(g):
        gxp = np.zeros_like(xp)
        gk = np.empty_like(k)
        for i in range(3):
            for j in range(3):
                gxp[i:i + h, j:j + w] += g * k[i, j]
                gk[i, j] = np.einsum("hwc,hwc->c", xp[i:i + h, j:j + w], g)
        return gxp[1:-1, 1:-1], gk, g.sum(axis=(0, 1))

    return make_result(out, (x, kernel, bias), bw)


def channel_conv1d(v: Tensor, taps: Tensor) -> Tensor:
    """Zero-padded 1-D cross-correlation along a channel vector (C,) with 3 taps."""
    if v.ndim != 1 or taps.shape != (3,):
        raise ShapeError(f"channel_conv1d: vector {v.shape}, taps {taps.shape}")
    vp = np.pad(v.data, 1)
    n = v.shape[0]
    out = taps.data[0] * vp[:n] + taps.data[1] * vp[1:n + 1] + taps.data[2] * vp[2:]

    def bw(g):
        gp = np.zeros_like(vp)
        for t in range(3):
            gp[t:t + n] += g * taps.data[t]
        gt = np.array([np.dot(vp[t:t + n], g) for t in range(3)], dtype=g.dtype)
        return gp[1:-1], gt

    return make_result(out, (v, taps), bw)


# ---------------------------------------------------------------------------
# normalization and nonlinearities
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gain: Tensor, offset: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize each position over channels with population variance."""
    c = x.shape[-1]
    if gain.shape != (c,) or offset.shape != (c,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / offset {offset.shape} vs {c} channels")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def bw(g):
        axes = tuple(range(x.ndim - 1))
        gxhat = g * gain.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_result(out, (x, gain, offset), bw)


def softmax_over_positions(logits: Tensor) -> Tensor:
    """Softmax along axis 0 (positions) independently for each column."""
    z = logits.data - logits.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=0, keepdims=True)),)

    return make_result(y, (logits,), bw)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return make_result((x.data * cdf).astype(x.data.dtype), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return make_result(y, (x,), bw)


# ---------------------------------------------------------------------------
# head-structured attention primitives
# ---------------------------------------------------------------------------

def head_project(q: Tensor, w: Tensor) -> Tensor:
    """Per-head projection of (N, h, d) features onto (h, d) vectors -> (N, h)."""
    if q.ndim != 3 or w.shape != q.shape[1:]:
        raise ShapeError(f"head_project: features {q.shape}, gate {w.shape}")

    def bw(g):
        return g[:, :, None] * w.data, np.einsum("nh,nhd->hd", g, q.data)

    return make_result(np.einsum("nhd,hd->nh", q.data, w.data), (q, w), bw)


def global_context(a: Tensor, q: Tensor) -> Tensor:
    """Attention-weighted sum over positions: (N, h), (N, h, d) -> (h, d)."""
    if a.shape != q.shape[:2]:
        raise ShapeError(f"global_context: map {a.shape} vs features {q.shape}")

    def bw(g):
        return np.einsum("hd,nhd->nh", g, q.data), a.data[:, :, None] * g

    return make_result(np.einsum("nh,nhd->hd", a.data, q.data), (a, q), bw)


# ---------------------------------------------------------------------------
# filtering used by the structural-similarity loss
# ---------------------------------------------------------------------------

def _filter_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[axis] - len(taps) + 1
    out = None
    for t, wt in enumerate(taps):
        part = np.take(a, np.arange(t, t + n), axis=axis) * wt
        out = part if out is None else out + part
    return out


def _filter_axis_T(g: np.ndarray, taps: np.ndarray, axis: int, size: int) -> np.ndarray:
    shape = list(g.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=g.dtype)
    n = g.shape[axis]
    for t, wt in enumerate(taps):
        idx = [slice(None)] * g.ndim
        idx[axis] = slice(t, t + n)
        out[tuple(idx)] += g * wt
    return out


def separable_filter(x: Tensor, taps: np.ndarray) -> Tensor:
    """Valid (unpadded) separable filtering of each channel of (H, W, C)."""
    k = len(taps)
    if x.shape[0] < k or x.shape[1] < k:
        raise ShapeError(f"filter of {k} taps needs at least {k}x{k} input, got {x.shape}")
    taps = np.asarray(taps, dtype=x.data.dtype)
    tmp = _filter_axis(x.data, taps, 0)
    out = _filter_axis(tmp, taps, 1)

    def bw(g):
        gt = _filter_axis_T(g, taps, 1, tmp.shape[1])
        return (_filter_axis_T(gt, taps, 0, x.shape[0]),)

    return make_result(out, (x,), bw)


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; a trailing odd row/column is dropped."""
    h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    crop = x.data[:2 * h2, :2 * w2]
    out = crop.reshape(h2, 2, w2, 2, c).mean(axis=(1, 3))

    def bw(g):
        full = np.zeros_like(x.data)
        full[:2 * h2, :2 * w2] = np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25
        return (full,)

    return make_result(out, (x,), bw)
