"""Bayer (RGGB) raw preprocessing: black level, amplification, 2x2 packing, crops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from .noise import ExposureSetting, generator

CHANNELS = ("R", "G1", "G2", "B")
# (row, col) offset of each packed channel inside a 2x2 RGGB cell
OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class RawFrame:
    bayer: np.ndarray
    black_level: float = 512.0
    white_level: float = 16383.0
    cfa: str = "RGGB"
    iso: int = 100
    exposure_s: float = 0.1

    def __post_init__(self):
        self.bayer = np.asarray(self.bayer, dtype=np.float64)
        if self.cfa != "RGGB":
            raise InputError(f"only RGGB mosaics are supported, got {self.cfa!r}")
        if self.bayer.ndim != 2:
            raise ShapeError(f"bayer plane must be 2-D, got {self.bayer.shape}")
        if self.bayer.shape[0] % 2 or self.bayer.shape[1] % 2:
            raise ShapeError(f"bayer plane needs even extents, got {self.bayer.shape}")
        if not self.black_level < self.white_level:
            raise InputError("black level must be below white level")
        if self.bayer.min() < 0 or self.bayer.max() > self.white_level:
            raise InputError(f"pixel values must lie in [0, {self.white_level}]")

    @classmethod
    def from_meta(cls, bayer: np.ndarray, meta: dict) -> "RawFrame":
        return cls(bayer, float(meta.get("black_level", 512)), float(meta.get("white_level", 16383)),
                   meta.get("cfa", "RGGB"), int(meta.get("iso", 100)), float(meta.get("exposure_s", 0.1)))

    def meta(self) -> dict:
        return {"black_level": self.black_level, "white_level": self.white_level, "cfa": self.cfa,
                "iso": self.iso, "exposure_s": self.exposure_s}


@dataclass
class PackedRaw:
    data: np.ndarray        # (H/2, W/2, 4) in R, G1, G2, B order
    normalized: bool = True


def pack_bayer(bayer: np.ndarray) -> np.ndarray:
    bayer = np.asarray(bayer)
    if bayer.ndim != 2 or bayer.shape[0] % 2 or bayer.shape[1] % 2:
        raise ShapeError(f"cannot pack bayer plane of shape {bayer.shape}")
    return np.stack([bayer[dy::2, dx::2] for dy, dx in OFFSETS], axis=-1)


def unpack_bayer(packed: np.ndarray) -> np.ndarray:
    packed = np.asarray(packed)
    if packed.ndim != 3 or packed.shape[2] != 4:
        raise ShapeError(f"packed raw must be (H, W, 4), got {packed.shape}")
    h, w, _ = packed.shape
    out = np.empty((2 * h, 2 * w), dtype=packed.dtype)
    for c, (dy, dx) in enumerate(OFFSETS):
        out[dy::2, dx::2] = packed[..., c]
    return out


def normalize(frame: RawFrame, exposure: ExposureSetting) -> np.ndarray:
    """Black-subtracted, white-normalized, amplified and clamped Bayer plane."""
    scaled = np.maximum((frame.bayer - frame.black_level) / (frame.white_level - frame.black_level), 0.0)
    return np.minimum(scaled * exposure.ratio, 1.0)


def preprocess(frame: RawFrame, exposure: ExposureSetting) -> PackedRaw:
    return PackedRaw(pack_bayer(normalize(frame, exposure)), normalized=True)


def random_patch(inp: np.ndarray, target: np.ndarray, size: int, seed: int,
                 flips: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Crop an aligned ``size`` window (in input pixels) and apply shared flips.

    The target may be at an integer multiple of the input resolution (2 for
    RGB targets of packed raw); its window is scaled accordingly.
    """
    ih, iw = inp.shape[:2]
    if size % 2:
        raise ConfigError(f"patch size must be even, got {size}")
    if size > ih or size > iw:
        raise ConfigError(f"patch size {size} exceeds input extent {ih}x{iw}")
    scale = target.shape[0] // ih
    if scale < 1 or target.shape[0] != scale * ih or target.shape[1] != scale * iw:
        raise ShapeError(f"target {target.shape[:2]} is not an integer multiple of input {inp.shape[:2]}")
    rng = generator(seed, stream=7)
    y = int(rng.integers(0, ih - size + 1))
    x = int(rng.integers(0, iw - size + 1))
    flip_v, flip_h = (bool(b) for b in rng.integers(0, 2, size=2)) if flips else (False, False)
    a = inp[y:y + size, x:x + size]
    b = target[scale * y:scale * (y + size), scale * x:scale * (x + size)]
    if flip_v:
        a, b = a[::-1], b[::-1]
    if flip_h:
        a, b = a[:, ::-1], b[:, ::-1]
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def flip(array: np.ndarray, vertical: bool = False, horizontal: bool = False) -> np.ndarray:
    if vertical:
        array = array[::-1]
    if horizontal:
        array = array[:, ::-1]
    return np.ascontiguousarray(array)
