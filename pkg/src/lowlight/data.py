"""Synthetic paired corpus standing in for long/short exposure captures.

Scenes are piecewise-smooth linear camera-RGB images. The long exposure is
their RGGB mosaic (packed, normalized); the RGB target comes from a fixed
toy ISP (3x3 colour matrix then gamma 1/2.2). Short exposures are simulated
through the sensor noise model and the raw preprocessing pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import ExposureSetting, NoiseParams, generator, sample_noisy
from .rawproc import RawFrame, pack_bayer, preprocess, unpack_bayer

COLOR_MATRIX = np.array([
    [1.60, -0.45, -0.15],
    [-0.25, 1.45, -0.20],
    [-0.05, -0.55, 1.60],
])
GAMMA = 1.0 / 2.2
BLACK_LEVEL = 512.0
WHITE_LEVEL = 16383.0


@dataclass
class Sample:
    clean: np.ndarray    # (h, w, 4) packed long exposure in [0, 1]
    target: np.ndarray   # (2h, 2w, 3) rendered RGB in [0, 1]


def random_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Linear camera RGB in [0, 1]: shaded background plus flat-shaded shapes."""
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    base = rng.uniform(0.05, 0.5, size=3)
    slope = rng.uniform(-0.3, 0.3, size=(2, 3))
    img = base + yy[..., None] * slope[0] + xx[..., None] * slope[1]
    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0.0, 0.9, size=3)
        cy, cx = rng.uniform(0, 1, size=2) * (height / max(height, width), width / max(height, width))
        ry, rx = rng.uniform(0.08, 0.35, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < ry) & (np.abs(xx - cx) < rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        shade = 1.0 + rng.uniform(-0.3, 0.3) * (yy - cy) / ry
        img = np.where(mask[..., None], color * shade[..., None], img)
    return np.clip(img, 0.0, 1.0)


def mosaic(rgb: np.ndarray) -> np.ndarray:
    """Sample an RGB image through an RGGB colour filter array."""
    h, w, _ = rgb.shape
    out = np.empty((h, w), dtype=rgb.dtype)
    out[0::2, 0::2] = rgb[0::2, 0::2, 0]
    out[0::2, 1::2] = rgb[0::2, 1::2, 1]
    out[1::2, 0::2] = rgb[1::2, 0::2, 1]
    out[1::2, 1::2] = rgb[1::2, 1::2, 2]
    return out


def render_rgb(rgb_linear: np.ndarray) -> np.ndarray:
    return np.clip(rgb_linear @ COLOR_MATRIX.T, 0.0, 1.0) ** GAMMA


def make_corpus(count: int, packed_size: int, seed: int) -> list[Sample]:
    """``count`` scenes of ``packed_size``^2 packed pixels (twice that in RGB)."""
    samples = []
    for i in range(count):
        rng = generator(seed, stream=1000 + i)
        rgb = random_scene(rng, 2 * packed_size, 2 * packed_size)
        samples.append(Sample(pack_bayer(mosaic(rgb)), render_rgb(rgb)))
    return samples


def simulate_short(clean: np.ndarray, params: NoiseParams, ratio: float, seed: int, stream: int = 0,
                   black_level: float = BLACK_LEVEL, white_level: float = WHITE_LEVEL) -> np.ndarray:
    """Noisy amplified packed input whose long-exposure counterpart is ``clean``.

    ``clean`` (normalized packed raw) is mapped to DN, divided by ``ratio``
    to give the short exposure's expected signal, corrupted by sensor noise
    at ratio 1, offset by the black level and clipped like a real capture,
    then passed through the standard black-level/amplify/clamp pipeline.
    """
    span = white_level - black_level
    x_star = np.asarray(clean, dtype=np.float64) * span / ratio
    noisy = sample_noisy(x_star, params, ExposureSetting(1.0), seed, stream=stream)
    bayer_short = np.clip(noisy + black_level, 0.0, white_level)
    frame = RawFrame(unpack_bayer(bayer_short), black_level, white_level)
    return preprocess(frame, ExposureSetting(ratio)).data


def gaussian_short(clean: np.ndarray, sigma2: float, ratio: float, seed: int, stream: int = 0,
                   black_level: float = BLACK_LEVEL, white_level: float = WHITE_LEVEL) -> np.ndarray:
    """Uncalibrated stand-in: signal-independent Gaussian noise with variance
    drawn uniformly from [sigma2*ratio^2/4, 4*sigma2*ratio^2] (amplified DN^2)."""
    rng = generator(seed, stream)
    base = sigma2 * ratio * ratio
    var = rng.uniform(base / 4.0, 4.0 * base)
    span = white_level - black_level
    noisy = np.asarray(clean, dtype=np.float64) + rng.normal(0.0, np.sqrt(var), size=np.shape(clean)) / span
    return np.clip(noisy, 0.0, 1.0)

