"""L1 and multi-scale structural similarity losses, plus PSNR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor

# per-level exponents of the standard five-scale MS-SSIM
MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class LossConfig:
    l1_weight: float = 0.8
    msssim_weight: float = 0.2
    msssim_levels: int = 3
    msssim_window: int = 11
    sigma: float = 1.5
    data_range: float = 1.0

    def __post_init__(self):
        if self.l1_weight < 0 or self.msssim_weight < 0 or self.l1_weight + self.msssim_weight == 0:
            raise ConfigError("loss weights must be nonnegative and not both zero")
        if self.msssim_window % 2 == 0:
            raise ConfigError(f"MS-SSIM window must be odd, got {self.msssim_window}")
        if not 1 <= self.msssim_levels <= len(MSSSIM_WEIGHTS):
            raise ConfigError(f"MS-SSIM levels must be in 1..{len(MSSSIM_WEIGHTS)}")

    @property
    def min_extent(self) -> int:
        return self.msssim_window * 2 ** (self.msssim_levels - 1)


def gaussian_taps(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def l1_loss(pred: Tensor, target) -> Tensor:
    target = _like(target, pred)
    return ops.mean(ops.abs(ops.sub(pred, target)))


def _like(x, ref: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        if x.shape != ref.shape:
            raise ShapeError(f"prediction {ref.shape} and target {x.shape} differ")
        return x
    arr = np.asarray(x, dtype=ref.data.dtype)
    if arr.shape != ref.shape:
        raise ShapeError(f"prediction {ref.shape} and target {arr.shape} differ")
    return Tensor(arr)


def _ssim_terms(x: Tensor, y: Tensor, taps: np.ndarray, c1: float, c2: float) -> tuple[Tensor, Tensor]:
    """Per-channel mean luminance*structure (ssim) and contrast*structure (cs)."""
    blur = lambda t: ops.separable_filter(t, taps)  # noqa: E731
    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = ops.mul(mu_x, mu_x), ops.mul(mu_y, mu_y), ops.mul(mu_x, mu_y)
    var_x = ops.sub(blur(ops.mul(x, x)), mu_xx)
    var_y = ops.sub(blur(ops.mul(y, y)), mu_yy)
    cov = ops.sub(blur(ops.mul(x, y)), mu_xy)
    cs_map = ops.div(ops.add(ops.mul(cov, 2.0), c2), ops.add(ops.add(var_x, var_y), c2))
    lum = ops.div(ops.add(ops.mul(mu_xy, 2.0), c1), ops.add(ops.add(mu_xx, mu_yy), c1))
    return ops.spatial_mean(ops.mul(lum, cs_map)), ops.spatial_mean(cs_map)


def msssim(pred: Tensor, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """Channel-averaged MS-SSIM of (H, W, C) images (level weights renormalized)."""
    target = _like(target, pred)
    if pred.ndim != 3:
        raise ShapeError(f"MS-SSIM expects (H, W, C) images, got {pred.shape}")
    if min(pred.shape[:2]) < cfg.min_extent:
        raise ConfigError(f"MS-SSIM with {cfg.msssim_levels} levels and window {cfg.msssim_window} "
                          f"needs spatial extent >= {cfg.min_extent}, got {pred.shape[:2]}")
    weights = np.asarray(MSSSIM_WEIGHTS[:cfg.msssim_levels])
    weights = weights / weights.sum()
    taps = gaussian_taps(cfg.msssim_window, cfg.sigma)
    c1 = (0.01 * cfg.data_range) ** 2
    c2 = (0.03 * cfg.data_range) ** 2
    x, y = pred, target
    score = None
    for level in range(cfg.msssim_levels):
        ssim, cs = _ssim_terms(x, y, taps, c1, c2)
        last = level == cfg.msssim_levels - 1
        term = ops.pow_scalar(ops.clamp_min(ssim if last else cs, 1e-12), float(weights[level]))
        score = term if score is None else ops.mul(score, term)
        if not last:
            x, y = ops.avg_pool2(x), ops.avg_pool2(y)
    return ops.mean(score)


def msssim_loss(pred: Tensor, target, cfg: LossConfig = LossConfig()) -> Tensor:
    return ops.sub(1.0, msssim(pred, target, cfg))


def combined_loss(pred: Tensor, target, cfg: LossConfig = LossConfig()) -> tuple[Tensor, dict]:
    """Weighted L1 + (1 - MS-SSIM); also returns the component values."""
    target = _like(target, pred)
    parts = {}
    total = None
    if cfg.l1_weight > 0:
        l1 = l1_loss(pred, target)
        parts["l1"] = float(l1.data)
        total = ops.mul(l1, cfg.l1_weight)
    if cfg.msssim_weight > 0:
        ms = msssim(pred, target, cfg)
        parts["msssim"] = float(ms.data)
        term = ops.mul(ops.sub(1.0, ms), cfg.msssim_weight)
        total = term if total is None else ops.add(total, term)
    parts["total"] = float(total.data)
    return total, parts


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(pred, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(data_range * data_range / mse)
