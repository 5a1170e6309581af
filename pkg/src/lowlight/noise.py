"""Poisson-Gaussian sensor noise: simulation, amplification moments, calibration.

A pixel with expected clean value ``x*`` (DN) reads ``k*Poisson(x*/k) +
Normal(0, sigma2)``. Digitally amplifying a short exposure by ``ratio``
scales both terms, while a long exposure collecting ``ratio`` times the
light only scales the signal. Calibration recovers ``(k, sigma2)`` from the
temporal mean/variance line ``Var = k*mean + sigma2`` of a static chart.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ConfigError, InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseParams:
    k: float
    sigma2: float

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"system gain k must be positive, got {self.k}")
        if not self.sigma2 >= 0:
            raise ConfigError(f"read-noise variance must be nonnegative, got {self.sigma2}")


@dataclass(frozen=True)
class ExposureSetting:
    ratio: float = 1.0

    def __post_init__(self):
        if not self.ratio >= 1:
            raise ConfigError(f"amplification ratio must be >= 1, got {self.ratio}")


@dataclass
class ChartStack:
    frames: np.ndarray          # (F, H, W) DN
    true_signal: np.ndarray     # (H, W) expected clean values x*
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.true_signal = np.asarray(self.true_signal, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != self.true_signal.shape:
            raise InputError(f"frames {self.frames.shape} do not match chart {self.true_signal.shape}")
        if self.frames.shape[0] < 2:
            raise InputError("a chart stack needs at least 2 frames")


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | (int(seed) & (2**64 - 1))))


def sample_noisy(
    clean,
    params: NoiseParams,
    exposure: ExposureSetting = ExposureSetting(),
    seed: int = 0,
    *,
    stream: int = 0,
    white_level: float | None = None,
) -> np.ndarray:
    """Draw ``ratio * (k*Poisson(clean/k) + Normal(0, sigma2))`` per pixel."""
    x = np.asarray(getattr(clean, "data", clean), dtype=np.float64)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InputError("clean signal must be finite and nonnegative")
    rng = generator(seed, stream)
    shot = params.k * rng.poisson(x / params.k)
    read = rng.normal(0.0, math.sqrt(params.sigma2), size=x.shape) if params.sigma2 > 0 else 0.0
    out = (shot + read) * exposure.ratio
    if white_level is not None:
        out = np.clip(out, 0.0, white_level)
    return out


def amplified_moments(x_star: float, params: NoiseParams, exposure: ExposureSetting) -> tuple[float, float]:
    """Mean and variance of a short exposure amplified by ``ratio``."""
    r = exposure.ratio
    return x_star * r, params.k * x_star * r * r + params.sigma2 * r * r


def reference_moments(x_star: float, params: NoiseParams, exposure: ExposureSetting) -> tuple[float, float]:
    """Mean and variance of a long exposure gathering ``ratio`` times the light."""
    r = exposure.ratio
    return x_star * r, params.k * x_star * r + params.sigma2


def chart_levels(levels: int, value_range=(0.0, 800.0), spacing: str = "cubic") -> np.ndarray:
    """Patch values of a step wedge; ``cubic`` packs more steps into the dark end."""
    t = np.linspace(0.0, 1.0, levels)
    if spacing == "cubic":
        t = t ** 3
    elif spacing != "linear":
        raise ConfigError(f"unknown chart spacing {spacing!r}")
    lo, hi = value_range
    return lo + (hi - lo) * t


def chart_layout(levels: int, size: tuple[int, int]) -> np.ndarray:
    """Integer patch index per pixel for a near-square grid of ``levels`` patches."""
    h, w = size
    cols = math.ceil(math.sqrt(levels))
    rows = math.ceil(levels / cols)
    if h < rows or w < cols:
        raise ConfigError(f"{levels} patches do not fit in a {h}x{w} chart (patch below 1 pixel)")
    row_of = np.searchsorted(np.linspace(0, h, rows + 1)[1:-1], np.arange(h), side="right")
    col_of = np.searchsorted(np.linspace(0, w, cols + 1)[1:-1], np.arange(w), side="right")
    return (row_of[:, None] * cols + col_of[None, :]) % levels


def synthesize_gray_chart(
    levels: int,
    frame_count: int,
    size: tuple[int, int],
    params: NoiseParams,
    seed: int = 0,
    *,
    value_range=(0.0, 800.0),
    spacing: str = "cubic",
    values=None,
    white_level: float | None = None,
) -> ChartStack:
    """Static step-wedge chart captured ``frame_count`` times at ratio 1."""
    if levels < 2:
        raise ConfigError("a chart needs at least 2 levels")
    if frame_count < 2:
        raise ConfigError("a chart needs at least 2 frames")
    vals = np.asarray(values, dtype=np.float64) if values is not None else chart_levels(levels, value_range, spacing)
    if len(vals) != levels:
        raise ConfigError(f"{len(vals)} values given for {levels} levels")
    truth = vals[chart_layout(levels, size)]
    frames = np.stack([
        sample_noisy(truth, params, ExposureSetting(1.0), seed, stream=i, white_level=white_level)
        for i in range(frame_count)
    ])
    meta = {"levels": levels, "range": [float(vals.min()), float(vals.max())], "spacing": spacing,
            "seed": seed, "params": {"k": params.k, "sigma2": params.sigma2}}
    return ChartStack(frames, truth, meta)


@dataclass
class CalibrationReport:
    params: NoiseParams
    r2: float
    patches: int
    sigma2_clamped: bool = False

    @property
    def k(self) -> float:
        return self.params.k

    @property
    def sigma2(self) -> float:
        return self.params.sigma2

    def lines(self) -> list[str]:
        out = [f"k={self.k:.6g}", f"sigma2={self.sigma2:.6g}", f"r2={self.r2:.6f}", f"patches={self.patches}"]
        if self.sigma2_clamped:
            out.append("warning=sigma2_clamped_to_zero")
        return out


def _fit_line(mean: np.ndarray, var: np.ndarray, weighted: bool, iterations: int = 5) -> np.ndarray:
    design = np.stack([mean, np.ones_like(mean)], axis=1)
    weights = np.ones_like(mean)
    coef = np.linalg.lstsq(design, var, rcond=None)[0]
    if weighted:
        # sampling spread of a variance estimate grows with the variance itself
        floor = max(1e-12, 1e-6 * float(np.mean(np.abs(var))))
        for _ in range(iterations):
            weights = 1.0 / np.maximum(design @ coef, floor)
            coef = np.linalg.lstsq(design * weights[:, None], var * weights, rcond=None)[0]
    return coef


def calibrate_noise(stack: ChartStack, *, per_pixel: bool = False, weighted: bool = True) -> CalibrationReport:
    """Fit ``Var = k*mean + sigma2`` to temporal statistics of a chart stack.

    By default per-pixel statistics are pooled per chart patch (pixels
    sharing a true value) and the line is fitted with variance-proportional
    weights; ``weighted=False`` gives plain least squares.
    """
    m = stack.frames.mean(axis=0)
    v = stack.frames.var(axis=0, ddof=1)
    if per_pixel:
        means, variances = m.reshape(-1), v.reshape(-1)
    else:
        _, labels = np.unique(stack.true_signal, return_inverse=True)
        labels = labels.reshape(-1)
        counts = np.bincount(labels)
        means = np.bincount(labels, m.reshape(-1)) / counts
        variances = np.bincount(labels, v.reshape(-1)) / counts
    if np.max(variances) <= 1e-12 * max(1.0, float(np.max(np.abs(means)))):
        raise CalibrationError("temporal variance is zero everywhere; noise parameters are degenerate")
    if np.ptp(means) <= 1e-12 * max(1.0, float(np.max(np.abs(means)))):
        raise CalibrationError("all temporal means are identical; regression is rank-deficient")
    k, sigma2 = _fit_line(means, variances, weighted)
    if not k > 0:
        raise CalibrationError(f"fitted gain k={k:.4g} is not positive")
    resid = variances - (k * means + sigma2)
    total = np.sum((variances - variances.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / total) if total > 0 else 1.0
    clamped = sigma2 < 0
    if clamped:
        log.warning("negative read-noise intercept %.4g clamped to 0", sigma2)
        sigma2 = 0.0
    return CalibrationReport(NoiseParams(float(k), float(sigma2)), r2, len(means), bool(clamped))


def calibrate_from_moments(means, variances) -> NoiseParams:
    """Exact line through given (mean, variance) pairs by ordinary least squares."""
    k, sigma2 = _fit_line(np.asarray(means, float), np.asarray(variances, float), weighted=False)
    return NoiseParams(float(k), float(sigma2))
