"""Toy-scale ablation grids: SSAB variants, skip fusion modes and noise sources."""

from __future__ import annotations

import numpy as np

from .benchmark import BenchmarkSettings, run_benchmark
from .blocks import SKIP_MODES, VARIANTS
from .data import make_corpus
from .errors import ConfigError
from .network import NetworkConfig
from .noise import NoiseParams
from .tensor import set_default_dtype
from .training import TrainPlan, evaluate, make_eval_set, train_stage1

GRIDS = ("ssab", "skip", "noise")
NETWORK_KEYS = ("scales", "widths", "blocks_per_scale", "bottleneck_blocks", "heads", "skip_mode", "variant")


def _grids(spec: str) -> list[str]:
    names = list(GRIDS) if spec == "all" else [g.strip() for g in spec.split(",") if g.strip()]
    bad = [g for g in names if g not in GRIDS]
    if bad:
        raise ConfigError(f"unknown ablation grid(s) {bad}; expected {GRIDS} or 'all'")
    return names


def run_grid(settings: dict) -> list[dict]:
    """Rows of {table, setting, metric, psnr} for the requested grids."""
    set_default_dtype(np.float32)
    seed = int(settings["seed"])
    sensor = NoiseParams(float(settings["k"]), float(settings["sigma2"]))
    ratio = float(settings["ratio"])
    base = NetworkConfig(**{k: settings[k] for k in NETWORK_KEYS}, seed=seed)
    rows: list[dict] = []
    grids = _grids(settings["grid"])

    if "ssab" in grids or "skip" in grids:
        corpus = make_corpus(int(settings["scenes"]), int(settings["scene_size"]), seed)
        held = make_corpus(int(settings["eval_scenes"]), int(settings["patch_size"]), seed + 10_000)
        evalset = make_eval_set(held, sensor, ratio, seed)
        plan = TrainPlan("stage1", steps=int(settings["steps"]), patch_size=int(settings["patch_size"]), seed=seed,
                         ratio=ratio, lr=float(settings["lr"]), eval_every=0)

        def score(config: NetworkConfig) -> float:
            model = train_stage1(plan, sensor, corpus, config).model
            return evaluate(model, evalset.noisy, evalset.clean)

        if "ssab" in grids:
            for variant in VARIANTS:
                rows.append({"table": "ssab", "setting": variant, "metric": "raw_psnr",
                             "psnr": score(base.replace(variant=variant))})
        if "skip" in grids:
            for mode in SKIP_MODES:
                rows.append({"table": "skip", "setting": mode, "metric": "raw_psnr",
                             "psnr": score(base.replace(skip_mode=mode))})

    if "noise" in grids:
        bench = BenchmarkSettings(steps=int(settings["steps"]), joint_steps=int(settings["joint_steps"]),
                                  ratio=ratio, train_scenes=int(settings["scenes"]),
                                  eval_scenes=int(settings["eval_scenes"]), scene_size=int(settings["scene_size"]),
                                  patch_size=int(settings["patch_size"]), lr=float(settings["lr"]),
                                  joint_lr=float(settings["joint_lr"]), sensor=sensor, network=base)
        result = run_benchmark(seed, bench)
        rows.append({"table": "noise", "setting": "noisy_input", "metric": "raw_psnr", "psnr": result.noisy_raw_psnr})
        for source, value in result.stage1_raw_psnr.items():
            rows.append({"table": "noise", "setting": source, "metric": "raw_psnr", "psnr": value})
        for source, value in result.two_stage_psnr.items():
            rows.append({"table": "noise", "setting": source, "metric": "rgb_psnr", "psnr": value})
        rows.append({"table": "noise", "setting": "one_stage", "metric": "rgb_psnr", "psnr": result.one_stage_psnr})
    return rows
