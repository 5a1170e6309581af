"""Two-stage training protocol at desk scale.

Stage 1 learns raw denoising from clean long exposures degraded with
simulated noise (calibrated, random Gaussian, or none). Stage 2 learns
raw-to-RGB on clean raw. The cascade is then fine-tuned end to end on
real-noise pairs with an RGB-only loss.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Sample, gaussian_short, simulate_short
from .errors import ConfigError
from .losses import LossConfig, combined_loss, psnr
from .network import Cascade, Network, NetworkConfig, build, save_checkpoint
from .noise import NoiseParams, generator
from .optim import Adam
from .rawproc import random_patch
from .tensor import GradTape, Tensor, backward, default_dtype

log = logging.getLogger(__name__)

PHASES = ("stage1", "stage2", "joint", "onestage")
NOISE_SOURCES = ("real_calibrated", "random", "none")


@dataclass
class TrainPlan:
    phase: str = "stage1"
    steps: int = 500
    patch_size: int = 64
    seed: int = 0
    noise_source: str = "real_calibrated"
    ratio: float = 100.0
    lr: float = 2e-3
    loss: LossConfig = field(default_factory=LossConfig)
    eval_every: int = 100

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if self.phase not in PHASES:
            raise ConfigError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        if self.noise_source not in NOISE_SOURCES:
            raise ConfigError(f"unknown noise source {self.noise_source!r}")
        if self.steps < 0:
            raise ConfigError("steps must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainPlan":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train plan fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CurvePoint:
    step: int
    l1: float
    msssim: float
    total: float
    psnr_val: float = float("nan")


@dataclass
class TrainResult:
    model: Network | Cascade
    curve: list[CurvePoint]

    def losses(self) -> np.ndarray:
        return np.array([p.total for p in self.curve])


def write_curve(path, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l1", "msssim", "total", "psnr_val"])
        for p in curve:
            writer.writerow([p.step, repr(p.l1), repr(p.msssim), repr(p.total),
                             "" if np.isnan(p.psnr_val) else repr(p.psnr_val)])


def smoothed(values: Sequence[float], window: int = 20) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode="valid")


# ---------------------------------------------------------------------------
# pair construction
# ---------------------------------------------------------------------------

def degrade(clean: np.ndarray, source: str, params: NoiseParams | None, ratio: float, seed: int,
            stream: int = 0) -> np.ndarray:
    """Stage-1 training input for a clean packed patch."""
    if source == "none":
        return clean.copy()
    if params is None:
        raise ConfigError(f"noise source {source!r} needs noise parameters")
    if source == "real_calibrated":
        return simulate_short(clean, params, ratio, seed, stream)
    return gaussian_short(clean, params.sigma2, ratio, seed, stream)


@dataclass
class EvalSet:
    noisy: list[np.ndarray]
    clean: list[np.ndarray]
    target: list[np.ndarray]


def make_eval_set(samples: Sequence[Sample], sensor: NoiseParams, ratio: float, seed: int) -> EvalSet:
    """Held-out inputs corrupted once with the true sensor noise."""
    noisy = [simulate_short(s.clean, sensor, ratio, seed, stream=50_000 + i) for i, s in enumerate(samples)]
    return EvalSet(noisy, [s.clean for s in samples], [s.target for s in samples])


def evaluate(model, inputs: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """Mean PSNR (dB) of clipped predictions over a set."""
    scores = [psnr(np.clip(model.predict(x), 0.0, 1.0), t) for x, t in zip(inputs, targets)]
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# generic optimisation loop
# ---------------------------------------------------------------------------

def _fit(model, plan: TrainPlan, corpus: Sequence[Sample], make_pair, val=None) -> list[CurvePoint]:
    if not corpus:
        raise ConfigError("training corpus is empty")
    opt = Adam(model.parameters(), lr=plan.lr)
    dtype = default_dtype()
    curve: list[CurvePoint] = []
    for step in range(plan.steps):
        rng = generator(plan.seed, stream=step)
        sample = corpus[int(rng.integers(len(corpus)))]
        patch_seed = int(rng.integers(2**31))
        inp, tgt = make_pair(sample, patch_seed, step)
        opt.zero_grad()
        with GradTape() as tape:
            pred = model(Tensor(inp.astype(dtype)))
            loss, parts = combined_loss(pred, tgt.astype(dtype), plan.loss)
        backward(loss, tape)
        opt.step()
        point = CurvePoint(step, parts.get("l1", 0.0), parts.get("msssim", 1.0), parts["total"])
        if val is not None and plan.eval_every and ((step + 1) % plan.eval_every == 0 or step + 1 == plan.steps):
            point.psnr_val = evaluate(model, *val)
        curve.append(point)
    return curve


def train_stage1(plan: TrainPlan, params: NoiseParams | None, corpus: Sequence[Sample],
                 config: NetworkConfig | None = None, model: Network | None = None, val=None) -> TrainResult:
    """Denoise network on (degraded, clean) packed patches."""
    model = model or build((config or NetworkConfig()).replace(stage="denoise"))

    def pair(sample, patch_seed, step):
        clean, _ = random_patch(sample.clean, sample.clean, plan.patch_size, patch_seed)
        return degrade(clean, plan.noise_source, params, plan.ratio, patch_seed, stream=step), clean

    return TrainResult(model, _fit(model, plan, corpus, pair, val))


def train_stage2(plan: TrainPlan, corpus: Sequence[Sample], config: NetworkConfig | None = None,
                 model: Network | None = None, val=None) -> TrainResult:
    """Raw-to-RGB network on clean packed patches."""
    model = model or build((config or NetworkConfig()).replace(stage="raw2rgb"))

    def pair(sample, patch_seed, step):
        return random_patch(sample.clean, sample.target, plan.patch_size, patch_seed)

    return TrainResult(model, _fit(model, plan, corpus, pair, val))


def _real_pairs(plan: TrainPlan, sensor: NoiseParams):
    def pair(sample, patch_seed, step):
        clean, target = random_patch(sample.clean, sample.target, plan.patch_size, patch_seed)
        return simulate_short(clean, sensor, plan.ratio, patch_seed, stream=step), target

    return pair


def finetune_joint(stage1: Network, stage2: Network, plan: TrainPlan, corpus: Sequence[Sample],
                   sensor: NoiseParams, val=None, copy_models: bool = True) -> TrainResult:
    """End-to-end fine-tuning of the cascade on real-noise (short, RGB) pairs."""
    if copy_models:
        stage1, stage2 = copy.deepcopy(stage1), copy.deepcopy(stage2)
    model = Cascade(stage1, stage2)
    return TrainResult(model, _fit(model, plan, corpus, _real_pairs(plan, sensor), val))


def train_one_stage(plan: TrainPlan, corpus: Sequence[Sample], sensor: NoiseParams,
                    config: NetworkConfig | None = None, val=None) -> TrainResult:
    """Single raw-to-RGB network trained directly on real-noise pairs."""
    model = build((config or NetworkConfig()).replace(stage="raw2rgb"))
    return TrainResult(model, _fit(model, plan, corpus, _real_pairs(plan, sensor), val))


def save_run(out_dir, name: str, result: TrainResult, plan: TrainPlan) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"checkpoint": out / f"{name}.ckpt", "curve": out / f"{name}_loss.csv", "plan": out / f"{name}_plan.json"}
    save_checkpoint(paths["checkpoint"], result.model)
    write_curve(paths["curve"], result.curve)
    paths["plan"].write_text(json.dumps(plan.to_dict(), indent=2, sort_keys=True))
    return paths
