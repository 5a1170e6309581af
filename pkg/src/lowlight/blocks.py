"""Siamese self-attention and skip-channel attention blocks.

The attention here never forms position-to-position interactions: a
softmax over positions yields one saliency map per head, which collapses
the query half into a per-head global context vector. Cost is therefore
linear in the number of pixels.

Layers count their own multiply-accumulates via ``macs(h, w)``, returning
``(spatial, fixed)``: work proportional to ``h*w`` and work on pooled
vectors that does not depend on image size. Normalization, activations and
additions are not counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .module import Module, kaiming_uniform, ones, zeros
from .tensor import Tensor

VARIANTS = ("full", "ssa1_only", "ssa2_only", "ssa1_ssa1", "ssa2_ssa2")
SKIP_MODES = ("sca", "add", "se", "eca")


# ---------------------------------------------------------------------------
# primitive layers
# ---------------------------------------------------------------------------

class LayerNorm(Module):
    def __init__(self, channels: int):
        self.gain = ones((channels,))
        self.offset = zeros((channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.offset)


class Conv1x1(Module):
    def __init__(self, cin: int, cout: int, rng: np.random.Generator):
        self.weight = kaiming_uniform(rng, (cin, cout), cin)
        self.bias = zeros((cout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1x1(x, self.weight, self.bias)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        cin, cout = self.weight.shape
        return h * w * cin * cout, 0


class DWConv3x3(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        self.kernel = kaiming_uniform(rng, (3, 3, channels), 9)
        self.bias = zeros((channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dwconv3x3(x, self.kernel, self.bias)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        return h * w * 9 * self.kernel.shape[2], 0


class SaliencyGate(Module):
    """Per-head projection vector W with scaling factor D = C/h."""

    def __init__(self, heads: int, head_dim: int, rng: np.random.Generator):
        self.W = kaiming_uniform(rng, (heads, head_dim), head_dim)
        self.D = float(head_dim)


@dataclass
class SiameseSplit:
    Q: Tensor
    P: Tensor

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    @property
    def h(self) -> int:
        return self.Q.shape[1]

    @property
    def C(self) -> int:
        return self.Q.shape[1] * self.Q.shape[2]


class Expansion(Module):
    """conv1x1 C->2C followed by a depth-wise 3x3 conv on the 2C channels."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv = Conv1x1(channels, 2 * channels, rng)
        self.dw = DWConv3x3(2 * channels, rng)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        return self.conv.macs(h, w)[0] + self.dw.macs(h, w)[0], 0


def siamese_split(x: Tensor, expansion: Expansion, heads: int) -> SiameseSplit:
    """Expand (H, W, C) to 2C channels and cut into twin (N, h, C/h) halves."""
    h, w, c = x.shape
    if heads < 1 or c % heads:
        raise ConfigError(f"{heads} heads do not divide {c} channels")
    y = expansion.dw(expansion.conv(x))
    shape = (h * w, heads, c // heads)
    q = ops.reshape(ops.channel_slice(y, 0, c), shape)
    p = ops.reshape(ops.channel_slice(y, c, 2 * c), shape)
    return SiameseSplit(q, p)


def attention_map(q: Tensor, gate: SaliencyGate) -> Tensor:
    """Softmax over positions of the per-head saliency logits QW / sqrt(D)."""
    logits = ops.mul(ops.head_project(q, gate.W), 1.0 / math.sqrt(gate.D))
    return ops.softmax_over_positions(logits)


def global_context(a: Tensor, q: Tensor) -> Tensor:
    return ops.global_context(a, q)


class SSA1(Module):
    """Global-context branch: X + ((G * P) L1 + Q) L2."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ConfigError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.norm = LayerNorm(channels)
        self.expand = Expansion(channels, rng)
        self.gate = SaliencyGate(heads, channels // heads, rng)
        self.L1 = kaiming_uniform(rng, (channels, channels), channels)
        self.L2 = kaiming_uniform(rng, (channels, channels), channels)

    def __call__(self, x: Tensor) -> Tensor:
        return ssa1(x, self)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        n, c = h * w, self.L1.shape[0]
        # saliency logits, weighted accumulation, G*P product, L1, L2
        return self.expand.macs(h, w)[0] + 3 * n * c + 2 * n * c * c, 0


class SSA2(Module):
    """Nonlinear gating branch: X + gelu(Q) * P."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        if channels % heads:
            raise ConfigError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.norm = LayerNorm(channels)
        self.expand = Expansion(channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ssa2(x, self)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        c = self.expand.dw.kernel.shape[2] // 2
        return self.expand.macs(h, w)[0] + h * w * c, 0


def ssa1(x: Tensor, weights: SSA1) -> Tensor:
    h, w, c = x.shape
    split = siamese_split(weights.norm(x), weights.expand, weights.heads)
    a = attention_map(split.Q, weights.gate)
    g = global_context(a, split.Q)
    fused = ops.reshape(ops.mul(g, split.P), (h * w, c))
    y = ops.linear(ops.add(ops.linear(fused, weights.L1), ops.reshape(split.Q, (h * w, c))), weights.L2)
    return ops.add(x, ops.reshape(y, (h, w, c)))


def ssa2(x: Tensor, weights: SSA2) -> Tensor:
    h, w, c = x.shape
    split = siamese_split(weights.norm(x), weights.expand, weights.heads)
    y = ops.mul(ops.gelu(split.Q), split.P)
    return ops.add(x, ops.reshape(y, (h, w, c)))


class SSAB(Module):
    """first(X) + second(first(X)); the two parts depend on ``variant``.

    ``ssa1_only`` / ``ssa2_only`` keep a single part and return it alone.
    """

    def __init__(self, channels: int, heads: int, rng: np.random.Generator, variant: str = "full"):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        kinds = {"full": (SSA1, SSA2), "ssa1_only": (SSA1,), "ssa2_only": (SSA2,),
                 "ssa1_ssa1": (SSA1, SSA1), "ssa2_ssa2": (SSA2, SSA2)}[variant]
        self.variant = variant
        self.first = kinds[0](channels, heads, rng)
        self.second = kinds[1](channels, heads, rng) if len(kinds) > 1 else None

    def __call__(self, x: Tensor) -> Tensor:
        return ssab(x, self)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        total = self.first.macs(h, w)[0]
        if self.second is not None:
            total += self.second.macs(h, w)[0]
        return total, 0


def ssab(x: Tensor, weights: SSAB) -> Tensor:
    y1 = weights.first(x)
    if weights.second is None:
        return y1
    return ops.add(y1, weights.second(y1))


# ---------------------------------------------------------------------------
# skip fusion
# ---------------------------------------------------------------------------

class SCA(Module):
    """Channel gate on the shallow branch, driven by pooled shallow AND deep statistics."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        if channels % reduction:
            raise ConfigError(f"reduction {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        self.mlp1 = kaiming_uniform(rng, (2 * channels, hidden), 2 * channels)
        self.mlp1_bias = zeros((hidden,))
        self.mlp2 = kaiming_uniform(rng, (hidden, channels), hidden)
        self.mlp2_bias = zeros((channels,))

    def __call__(self, shallow: Tensor, deep: Tensor) -> Tensor:
        return sca_forward(shallow, deep, self)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        c2, hidden = self.mlp1.shape
        c = c2 // 2
        return h * w * c, c2 * hidden + hidden * c


def sca_forward(shallow: Tensor, deep: Tensor, weights: SCA) -> Tensor:
    if shallow.shape != deep.shape:
        raise ShapeError(f"skip branches differ: shallow {shallow.shape} vs deep {deep.shape}")
    merged = ops.concat([ops.spatial_mean(shallow), ops.spatial_mean(deep)], axis=0)
    hidden = ops.gelu(ops.linear(merged, weights.mlp1, weights.mlp1_bias))
    gate = ops.sigmoid(ops.linear(hidden, weights.mlp2, weights.mlp2_bias))
    return ops.add(ops.mul(shallow, gate), deep)


class SESkip(Module):
    """Squeeze-excitation gate computed from the encoder branch only."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        if channels % reduction:
            raise ConfigError(f"reduction {reduction} does not divide {channels} channels")
        hidden = channels // reduction
        self.mlp1 = kaiming_uniform(rng, (channels, hidden), channels)
        self.mlp1_bias = zeros((hidden,))
        self.mlp2 = kaiming_uniform(rng, (hidden, channels), hidden)
        self.mlp2_bias = zeros((channels,))

    def __call__(self, shallow: Tensor, deep: Tensor) -> Tensor:
        if shallow.shape != deep.shape:
            raise ShapeError(f"skip branches differ: shallow {shallow.shape} vs deep {deep.shape}")
        hidden = ops.gelu(ops.linear(ops.spatial_mean(shallow), self.mlp1, self.mlp1_bias))
        gate = ops.sigmoid(ops.linear(hidden, self.mlp2, self.mlp2_bias))
        return ops.add(ops.mul(shallow, gate), deep)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        c, hidden = self.mlp1.shape
        return h * w * c, 2 * c * hidden


class ECASkip(Module):
    """Efficient channel attention: 3-tap 1-D conv across pooled encoder channels."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.channels = channels
        self.taps = kaiming_uniform(rng, (3,), 3)

    def __call__(self, shallow: Tensor, deep: Tensor) -> Tensor:
        if shallow.shape != deep.shape:
            raise ShapeError(f"skip branches differ: shallow {shallow.shape} vs deep {deep.shape}")
        gate = ops.sigmoid(ops.channel_conv1d(ops.spatial_mean(shallow), self.taps))
        return ops.add(ops.mul(shallow, gate), deep)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        return h * w * self.channels, 3 * self.channels


class AddSkip(Module):
    def __call__(self, shallow: Tensor, deep: Tensor) -> Tensor:
        if shallow.shape != deep.shape:
            raise ShapeError(f"skip branches differ: shallow {shallow.shape} vs deep {deep.shape}")
        return ops.add(shallow, deep)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        return 0, 0


def make_skip(mode: str, channels: int, rng: np.random.Generator) -> Module:
    if mode == "sca":
        return SCA(channels, rng)
    if mode == "add":
        return AddSkip()
    if mode == "se":
        return SESkip(channels, rng)
    if mode == "eca":
        return ECASkip(channels, rng)
    raise ConfigError(f"unknown skip mode {mode!r}; expected one of {SKIP_MODES}")


# ---------------------------------------------------------------------------
# quadratic reference, for complexity comparisons in tests
# ---------------------------------------------------------------------------

def dot_product_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray,
                          wo: np.ndarray) -> np.ndarray:
    """Single-head scaled dot-product self-attention over all H*W positions."""
    h, w, c = x.shape
    flat = x.reshape(h * w, c)
    q, k, v = flat @ wq, flat @ wk, flat @ wv
    logits = q @ k.T / math.sqrt(c)
    logits -= logits.max(axis=1, keepdims=True)
    a = np.exp(logits)
    a /= a.sum(axis=1, keepdims=True)
    return (flat + (a @ v) @ wo).reshape(h, w, c)


def dot_product_attention_macs(h: int, w: int, channels: int) -> int:
    n = h * w
    projections = 4 * n * channels * channels
    pairwise = 2 * n * n * channels
    return projections + pairwise
