"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor, backward, no_grad
from . import ops


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max_rel_error={self.max_rel_error:.3e} "
                f"(threshold {self.threshold:.0e}, {self.checked} entries)")


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    *,
    step: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    name: str = "gradcheck",
    threshold: float = 1e-4,
    floor: float = 1e-6,
    relative_floor: float = 0.0,
) -> GradCheckResult:
    """Compare tape gradients of the scalar ``fn()`` against central differences.

    ``max_entries`` caps the number of probed entries per tensor (chosen at
    random without replacement); ``None`` probes all of them. With
    ``relative_floor`` > 0, entries smaller than that fraction of the
    largest numeric gradient seen are compared on an absolute scale,
    since central differences cannot resolve them to full relative precision.
    """
    for t in tensors:
        t.grad = None
    with GradTape() as tape:
        loss = fn()
    backward(loss, tape)
    rng = np.random.default_rng(seed)
    pairs = []
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx), dtype=np.float64)
        with no_grad():
            for n, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(fn().data)
                flat[i] = orig - step
                fm = float(fn().data)
                flat[i] = orig
                numeric[n] = (fp - fm) / (2.0 * step)
        pairs.append((analytic.reshape(-1)[idx], numeric))
        t.grad = None
    scale = max((float(np.max(np.abs(n), initial=0.0)) for _, n in pairs), default=0.0)
    floor = max(floor, relative_floor * scale)
    worst = max((relative_error(a, n, floor) for a, n in pairs), default=0.0)
    checked = sum(len(n) for _, n in pairs)
    return GradCheckResult(name, worst, checked, threshold)


def projected(out_fn: Callable[[], Tensor], shape: tuple[int, ...], seed: int = 1) -> Callable[[], Tensor]:
    """Turn a tensor-valued function into a scalar via a fixed random projection."""
    weights = Tensor(np.random.default_rng(seed).standard_normal(shape))

    def fn() -> Tensor:
        return ops.sum(ops.mul(out_fn(), weights))

    return fn
