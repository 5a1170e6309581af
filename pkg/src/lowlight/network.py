"""U-shaped restoration network, two-stage cascade and analytic cost model.

Layout per network: a pointwise embedding, an encoder of ``scales - 1``
levels (SSAB blocks, then pixel-unshuffle and a pointwise conv to the next
width), bottleneck SSAB blocks, and a mirrored decoder (pointwise conv,
pixel-shuffle, skip fusion, SSAB blocks). The denoise stage predicts a
residual on its 4-channel packed input; the raw2rgb stage emits 12
channels that pixel-shuffle to RGB at twice the packed resolution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .blocks import SKIP_MODES, VARIANTS, SSAB, Conv1x1, make_skip
from .errors import ConfigError, LoadError, ShapeError
from .io import load_archive, save_archive
from .module import Module, zeros
from .tensor import Tensor, default_dtype, no_grad

STAGES = ("denoise", "raw2rgb")


@dataclass
class NetworkConfig:
    scales: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_scale: int = 1
    bottleneck_blocks: int = 2
    heads: int = 2
    skip_mode: str = "sca"
    variant: str = "full"
    stage: str = "denoise"
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        if len(self.widths) != self.scales:
            raise ConfigError(f"{len(self.widths)} widths given for {self.scales} scales")
        if any(w % self.heads for w in self.widths):
            raise ConfigError(f"every width must be divisible by heads={self.heads}: {self.widths}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"unknown skip mode {self.skip_mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}")
        if self.skip_mode in ("sca", "se") and any(w % 4 for w in self.widths[:-1]):
            raise ConfigError("skip attention needs widths divisible by its reduction ratio 4")

    @property
    def base_width(self) -> int:
        return self.widths[0]

    @property
    def factor(self) -> int:
        """Spatial extents of the packed input must be multiples of this."""
        return 2 ** (self.scales - 1)

    def replace(self, **changes) -> "NetworkConfig":
        return NetworkConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known - {"base_width"}
        if unknown:
            raise ConfigError(f"unknown network config fields: {sorted(unknown)}")
        if "base_width" in d and "widths" not in d:
            d = dict(d, widths=[int(d["base_width"]) * 2 ** l for l in range(int(d.get("scales", 4)))])
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read network config {path}: {exc}") from exc


def toy_config(**changes) -> NetworkConfig:
    """Small configuration used for desk-scale training runs."""
    return NetworkConfig(scales=2, widths=(8, 16), blocks_per_scale=1, bottleneck_blocks=1).replace(**changes)


@dataclass
class CostReport:
    macs: int
    params: int
    spatial_macs: int = 0
    fixed_macs: int = 0
    per_layer: dict = field(default_factory=dict, repr=False)

    def __add__(self, other: "CostReport") -> "CostReport":
        return CostReport(self.macs + other.macs, self.params + other.params,
                          self.spatial_macs + other.spatial_macs, self.fixed_macs + other.fixed_macs)

    def line(self) -> str:
        return f"GMACs={self.macs / 1e9:.4f} Params_M={self.params / 1e6:.4f}"


class Stack(Module):
    def __init__(self, channels: int, count: int, config: NetworkConfig, rng: np.random.Generator):
        self.ssab = [SSAB(channels, config.heads, rng, config.variant) for _ in range(count)]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.ssab:
            x = block(x)
        return x

    def macs(self, h: int, w: int) -> tuple[int, int]:
        return sum(b.macs(h, w)[0] for b in self.ssab), 0


class Network(Module):
    def __init__(self, config: NetworkConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        widths = config.widths
        self.intro = Conv1x1(4, widths[0], rng)
        self.enc = [Stack(widths[l], config.blocks_per_scale, config, rng) for l in range(config.scales - 1)]
        self.down = [Conv1x1(4 * widths[l], widths[l + 1], rng) for l in range(config.scales - 1)]
        self.bottleneck = Stack(widths[-1], config.bottleneck_blocks, config, rng)
        self.up = [Conv1x1(widths[l + 1], 4 * widths[l], rng) for l in range(config.scales - 1)]
        self.skip = [make_skip(config.skip_mode, widths[l], rng) for l in range(config.scales - 1)]
        self.dec = [Stack(widths[l], config.blocks_per_scale, config, rng) for l in range(config.scales - 1)]
        if config.stage == "denoise":
            self.head = Conv1x1(widths[0], 4, rng)
            # residual head starts at zero: the untrained stage is the identity
            self.head.weight = zeros(self.head.weight.shape)
        else:
            self.head = Conv1x1(widths[0], 12, rng)
        self.assign_names()

    @property
    def out_channels(self) -> int:
        return 4 if self.config.stage == "denoise" else 3

    @property
    def out_scale(self) -> int:
        return 1 if self.config.stage == "denoise" else 2

    def check_input(self, shape: tuple[int, ...]) -> None:
        f = self.config.factor
        if len(shape) != 3 or shape[2] != 4:
            raise ShapeError(f"network input must be packed raw (H, W, 4), got {shape}")
        if shape[0] % f or shape[1] % f:
            raise ShapeError(f"input extents {shape[:2]} must be multiples of {f}")

    def __call__(self, x: Tensor) -> Tensor:
        self.check_input(x.shape)
        feat = self.intro(x)
        skips = []
        for level, down in zip(self.enc, self.down):
            feat = level(feat)
            skips.append(feat)
            feat = down(ops.pixel_unshuffle(feat, 2))
        feat = self.bottleneck(feat)
        for l in reversed(range(len(self.dec))):
            feat = ops.pixel_shuffle(self.up[l](feat), 2)
            feat = self.dec[l](self.skip[l](skips[l], feat))
        out = self.head(feat)
        if self.config.stage == "denoise":
            return ops.add(x, out)
        return ops.pixel_shuffle(out, 2)

    def macs(self, h: int, w: int) -> tuple[int, int]:
        """(spatial, fixed) multiply-accumulates for a packed (h, w, 4) input."""
        self.check_input((h, w, 4))
        spatial = fixed = 0

        def acc(layer, hh, ww):
            nonlocal spatial, fixed
            s, f = layer.macs(hh, ww)
            spatial += s
            fixed += f

        acc(self.intro, h, w)
        hh, ww = h, w
        for level, down in zip(self.enc, self.down):
            acc(level, hh, ww)
            hh, ww = hh // 2, ww // 2
            acc(down, hh, ww)
        acc(self.bottleneck, hh, ww)
        for l in reversed(range(len(self.dec))):
            acc(self.up[l], hh, ww)
            hh, ww = hh * 2, ww * 2
            acc(self.skip[l], hh, ww)
            acc(self.dec[l], hh, ww)
        acc(self.head, hh, ww)
        return spatial, fixed

    def cost(self, h: int, w: int) -> CostReport:
        spatial, fixed = self.macs(h, w)
        return CostReport(spatial + fixed, self.num_params(), spatial, fixed)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self(Tensor(np.asarray(x, dtype=default_dtype()))).data


def build(config: NetworkConfig) -> Network:
    return Network(config)


def count_cost(config: NetworkConfig, input_shape: tuple[int, int]) -> CostReport:
    """Closed-form MAC and parameter totals for a packed input of ``input_shape`` (H, W)."""
    return build(config).cost(*input_shape[:2])


class Cascade(Module):
    """Denoise stage followed by raw2rgb stage, differentiable end to end."""

    def __init__(self, stage1: Network, stage2: Network):
        if stage1.config.stage != "denoise" or stage2.config.stage != "raw2rgb":
            raise ConfigError("cascade needs a denoise stage followed by a raw2rgb stage")
        if stage1.out_channels != 4:
            raise ConfigError("stage-1 output must be packed raw with 4 channels")
        self.stage1 = stage1
        self.stage2 = stage2
        self.assign_names()

    @property
    def config(self) -> NetworkConfig:
        return self.stage2.config

    @property
    def out_scale(self) -> int:
        return 2

    def check_input(self, shape) -> None:
        self.stage1.check_input(shape)
        self.stage2.check_input(shape)

    def __call__(self, x: Tensor) -> Tensor:
        return self.stage2(self.stage1(x))

    def freeze_stage1(self, frozen: bool = True) -> None:
        self.stage1.set_trainable(not frozen)

    def cost(self, h: int, w: int) -> CostReport:
        return self.stage1.cost(h, w) + self.stage2.cost(h, w)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self(Tensor(np.asarray(x, dtype=default_dtype()))).data


def cascade(stage1: Network, stage2: Network) -> Cascade:
    return Cascade(stage1, stage2)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Module) -> None:
    if isinstance(model, Cascade):
        meta = {"kind": "cascade", "stage1": model.stage1.config.to_dict(), "stage2": model.stage2.config.to_dict()}
    else:
        meta = {"kind": "network", "config": model.config.to_dict()}
    save_archive(path, model.state_dict(), meta)


def load_checkpoint(path, model: Module | None = None) -> Module:
    """Load weights into ``model`` (or a model rebuilt from the stored configs)."""
    state, meta = load_archive(path)
    if model is None:
        if meta is None:
            raise LoadError(f"{path} carries no architecture metadata; pass a model")
        if meta.get("kind") == "cascade":
            model = Cascade(build(NetworkConfig.from_dict(meta["stage1"])),
                            build(NetworkConfig.from_dict(meta["stage2"])))
        else:
            model = build(NetworkConfig.from_dict(meta["config"]))
    model.load_state_dict(state)
    return model


# ---------------------------------------------------------------------------
# tiled inference
# ---------------------------------------------------------------------------

def infer_tiled(model, x: np.ndarray, tile: int = 64, overlap: int = 16) -> np.ndarray:
    """Run ``model`` on overlapping tiles and keep each tile's centre region.

    Tiles are ``tile`` packed pixels wide plus ``overlap`` context on each
    interior side. Exact agreement with an untiled pass requires the model's
    receptive field to fit inside the overlap; global pooling and
    saliency-softmax paths make tiling an approximation otherwise.
    """
    h, w = x.shape[:2]
    f = model.config.factor if not isinstance(model, Cascade) else max(
        model.stage1.config.factor, model.stage2.config.factor)
    if tile % f or overlap % f:
        raise ConfigError(f"tile {tile} and overlap {overlap} must be multiples of {f}")
    model.check_input(x.shape)
    s = model.out_scale
    out = None
    for y0 in range(0, h, tile):
        for x0 in range(0, w, tile):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            ey0, ex0 = max(0, y0 - overlap), max(0, x0 - overlap)
            ey1, ex1 = min(h, y1 + overlap), min(w, x1 + overlap)
            pred = model.predict(x[ey0:ey1, ex0:ex1])
            if out is None:
                out = np.zeros((h * s, w * s, pred.shape[2]), dtype=pred.dtype)
            out[s * y0:s * y1, s * x0:s * x1] = pred[s * (y0 - ey0):s * (y1 - ey0), s * (x0 - ex0):s * (x1 - ex0)]
    return out
