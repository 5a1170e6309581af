"""Synthetic two-stage benchmark: noise-source and one/two-stage comparisons."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .data import make_corpus
from .network import NetworkConfig, toy_config
from .noise import NoiseParams, calibrate_noise, synthesize_gray_chart
from .training import (NOISE_SOURCES, TrainPlan, evaluate, finetune_joint, make_eval_set, train_one_stage,
                       train_stage1, train_stage2)

log = logging.getLogger(__name__)

SENSOR = NoiseParams(k=0.5, sigma2=100.0)


@dataclass
class BenchmarkSettings:
    steps: int = 500
    stage2_steps: int = 500
    joint_steps: int = 500
    ratio: float = 100.0
    train_scenes: int = 24
    eval_scenes: int = 6
    scene_size: int = 96
    patch_size: int = 64
    lr: float = 2e-3
    joint_lr: float = 1e-4
    sensor: NoiseParams = SENSOR
    network: NetworkConfig = field(default_factory=toy_config)


@dataclass
class BenchmarkResult:
    seed: int
    calibrated: NoiseParams
    noisy_raw_psnr: float
    stage1_raw_psnr: dict[str, float]
    two_stage_psnr: dict[str, float]
    one_stage_psnr: float
    seconds: float
    curves: dict = field(default_factory=dict, repr=False)


def run_benchmark(seed: int, settings: BenchmarkSettings = BenchmarkSettings()) -> BenchmarkResult:
    start = time.perf_counter()
    s = settings
    corpus = make_corpus(s.train_scenes, s.scene_size, seed)
    held_out = make_corpus(s.eval_scenes, s.patch_size, seed + 10_000)
    evalset = make_eval_set(held_out, s.sensor, s.ratio, seed)

    chart = synthesize_gray_chart(64, 50, (128, 128), s.sensor, seed)
    calibrated = calibrate_noise(chart).params

    def plan(phase, **kw):
        return TrainPlan(phase=phase, steps=kw.pop("steps", s.steps), patch_size=s.patch_size, seed=seed,
                         ratio=s.ratio, lr=kw.pop("lr", s.lr), eval_every=0, **kw)

    net = s.network.replace(seed=seed)
    curves = {}
    stage2 = train_stage2(plan("stage2", steps=s.stage2_steps), corpus, net)
    curves["stage2"] = stage2.losses()

    noisy_raw = float(np.mean([_psnr(n, c) for n, c in zip(evalset.noisy, evalset.clean)]))
    stage1_raw, two_stage = {}, {}
    for source in NOISE_SOURCES:
        s1 = train_stage1(plan("stage1", noise_source=source), calibrated, corpus, net)
        curves[f"stage1_{source}"] = s1.losses()
        stage1_raw[source] = evaluate(s1.model, evalset.noisy, evalset.clean)
        joint = finetune_joint(s1.model, stage2.model, plan("joint", steps=s.joint_steps, lr=s.joint_lr),
                               corpus, s.sensor)
        curves[f"joint_{source}"] = joint.losses()
        two_stage[source] = evaluate(joint.model, evalset.noisy, evalset.target)

    one = train_one_stage(plan("onestage", steps=s.steps + s.joint_steps), corpus, s.sensor, net)
    curves["onestage"] = one.losses()
    one_psnr = evaluate(one.model, evalset.noisy, evalset.target)
    result = BenchmarkResult(seed, calibrated, noisy_raw, stage1_raw, two_stage, one_psnr,
                             time.perf_counter() - start, curves)
    log.info("seed %d: %s", seed, result)
    return result


def _psnr(a, b) -> float:
    from .losses import psnr
    return psnr(a, b)


def summarize(results: list[BenchmarkResult]) -> dict[str, float]:
    out = {"noisy_raw": float(np.mean([r.noisy_raw_psnr for r in results])),
           "one_stage": float(np.mean([r.one_stage_psnr for r in results]))}
    for source in NOISE_SOURCES:
        out[f"stage1_raw_{source}"] = float(np.mean([r.stage1_raw_psnr[source] for r in results]))
        out[f"two_stage_{source}"] = float(np.mean([r.two_stage_psnr[source] for r in results]))
    return out
