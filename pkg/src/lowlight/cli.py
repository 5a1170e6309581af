"""Command-line entry point: ``lowlight <command> [flags]``.

Settings resolve in three layers: built-in defaults, then command-line
flags, then the JSON file given with ``--config`` (which wins). Every run
prints the resolved settings and seed before doing any work. Failures exit
with status 1 and a single ``error kind=... message=...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError, InputError, LowlightError
from .io import load_raw, load_tensor, save_raw, save_tensor, write_image
from .noise import (ChartStack, ExposureSetting, NoiseParams, calibrate_noise, generator, sample_noisy,
                    synthesize_gray_chart)
from .network import (Cascade, CostReport, Network, NetworkConfig, build, infer_tiled, load_checkpoint,
                      toy_config)
from .rawproc import RawFrame, preprocess

log = logging.getLogger("lowlight")

PRESET_4K = (4256, 2848)
COMMANDS = ("calibrate", "synth-chart", "simulate", "preprocess", "train", "infer", "cost", "gradcheck", "ablate")
NETWORK_KEYS = ("scales", "widths", "blocks_per_scale", "bottleneck_blocks", "heads", "skip_mode", "variant")


class UsageError(LowlightError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2 with a usage dump
        raise UsageError(message)


# ---------------------------------------------------------------------------
# settings
# ---------------------------------------------------------------------------

def _network_defaults(preset: str) -> dict:
    if preset == "default":
        cfg = NetworkConfig()
    elif preset == "toy":
        cfg = toy_config()
    else:
        raise ConfigError(f"unknown network preset {preset!r}; expected 'default' or 'toy'")
    return {k: getattr(cfg, k) for k in NETWORK_KEYS}


COMMON = {"seed": 0, "ratio": 100.0, "iso": 100, "out_dir": None, "input": None, "checkpoint": None}
SENSOR = {"k": 0.5, "sigma2": 100.0}

DEFAULTS: dict[str, dict[str, Any]] = {
    "synth-chart": {**SENSOR, "levels": 64, "frames": 50, "size": 128, "value_range": [0.0, 800.0],
                    "spacing": "cubic"},
    "calibrate": {"per_pixel": False, "weighted": True},
    "simulate": {**SENSOR, "size": 128, "black_level": 512.0, "white_level": 16383.0},
    "preprocess": {},
    "train": {"preset": "toy", "stage": "all", "steps": 500, "joint_steps": 500, "patch_size": 64, "lr": 2e-3,
              "joint_lr": 1e-4, "noise_source": "real_calibrated", "scenes": 24, "scene_size": 96, **SENSOR},
    "infer": {"preset": "toy", "tile": 0, "overlap": 16},
    "cost": {"preset": "default"},
    "gradcheck": {"ops": "all"},
    "ablate": {"preset": "toy", "grid": "all", "steps": 500, "joint_steps": 500, "patch_size": 64,
               "lr": 2e-3, "joint_lr": 1e-4, "scenes": 24, "scene_size": 96, "eval_scenes": 6, **SENSOR},
}
NETWORK_COMMANDS = ("train", "infer", "cost", "ablate")


def resolve(command: str, flags: dict[str, Any], config_path: str | None) -> dict[str, Any]:
    """Defaults, overridden by explicit flags, overridden by the JSON config."""
    settings = {**COMMON, **DEFAULTS[command]}
    settings.update({k: v for k, v in flags.items() if v is not None})
    file_cfg = {}
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
    if command in NETWORK_COMMANDS:
        preset = file_cfg.get("preset", settings.get("preset", "default"))
        base = _network_defaults(preset)
        base.update({k: v for k, v in settings.items() if k in NETWORK_KEYS})
        settings = {**base, **settings}
    allowed = set(settings) | (set(NETWORK_KEYS) if command in NETWORK_COMMANDS else set())
    unknown = sorted(set(file_cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    settings.update(file_cfg)
    if "widths" in settings:
        settings["widths"] = list(settings["widths"])
    return settings


def network_config(settings: dict, stage: str) -> NetworkConfig:
    return NetworkConfig(**{k: settings[k] for k in NETWORK_KEYS}, stage=stage, seed=int(settings["seed"]))


def _sensor(settings: dict) -> NoiseParams:
    return NoiseParams(float(settings["k"]), float(settings["sigma2"]))


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out_dir"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def parse_size(text: str) -> tuple[int, int]:
    """``WxH`` to (width, height)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise ConfigError(f"extents must be positive, got {text!r}")
    return w, h


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth_chart(s: dict) -> int:
    chart = synthesize_gray_chart(int(s["levels"]), int(s["frames"]), (int(s["size"]), int(s["size"])),
                                  _sensor(s), int(s["seed"]), value_range=tuple(s["value_range"]),
                                  spacing=s["spacing"])
    out = _out_dir(s)
    save_tensor(out / "chart_frames.slt", chart.frames)
    save_tensor(out / "chart_truth.slt", chart.true_signal)
    (out / "chart.json").write_text(json.dumps(chart.meta, indent=2, sort_keys=True))
    print(f"wrote {out / 'chart_frames.slt'} frames={chart.frames.shape[0]} size={chart.frames.shape[1:]}")
    return 0


def load_chart(path) -> ChartStack:
    path = Path(path)
    directory = path if path.is_dir() else path.parent
    meta_path = directory / "chart.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return ChartStack(load_tensor(directory / "chart_frames.slt"), load_tensor(directory / "chart_truth.slt"), meta)


def cmd_calibrate(s: dict) -> int:
    if not s["input"]:
        raise InputError("calibrate needs --input pointing at a chart directory")
    report = calibrate_noise(load_chart(s["input"]), per_pixel=bool(s["per_pixel"]), weighted=bool(s["weighted"]))
    for line in report.lines():
        print(line)
    if s["out_dir"]:
        (_out_dir(s) / "calibration.json").write_text(json.dumps(
            {"k": report.k, "sigma2": report.sigma2, "r2": report.r2, "patches": report.patches}, indent=2))
    return 0


def _synthetic_clean_bayer(s: dict) -> tuple[np.ndarray, dict]:
    from .data import mosaic, random_scene
    size = int(s["size"])
    rgb = random_scene(generator(int(s["seed"]), stream=900), 2 * size, 2 * size)
    black, white = float(s["black_level"]), float(s["white_level"])
    return black + mosaic(rgb) * (white - black), {"black_level": black, "white_level": white, "cfa": "RGGB",
                                                    "iso": int(s["iso"]), "exposure_s": 10.0}


def cmd_simulate(s: dict) -> int:
    """Short exposure from a clean long exposure (synthetic scene when no --input)."""
    if s["input"]:
        bayer, meta = load_raw(s["input"])
    else:
        bayer, meta = _synthetic_clean_bayer(s)
    frame = RawFrame.from_meta(bayer, meta)
    ratio = float(s["ratio"])
    ExposureSetting(ratio)
    x_star = np.maximum(frame.bayer - frame.black_level, 0.0) / ratio
    noisy = sample_noisy(x_star, _sensor(s), ExposureSetting(1.0), int(s["seed"]), stream=0)
    short = np.clip(noisy + frame.black_level, 0.0, frame.white_level)
    out = _out_dir(s)
    short_meta = dict(frame.meta(), iso=int(s["iso"]), exposure_s=frame.exposure_s / ratio)
    save_raw(out / "short.raw", short, short_meta)
    if not s["input"]:
        save_raw(out / "long.raw", frame.bayer, frame.meta())
    print(f"wrote {out / 'short.raw'} ratio={ratio:g} size={short.shape[1]}x{short.shape[0]}")
    return 0


def cmd_preprocess(s: dict) -> int:
    if not s["input"]:
        raise InputError("preprocess needs --input pointing at a raw file")
    bayer, meta = load_raw(s["input"])
    packed = preprocess(RawFrame.from_meta(bayer, meta), ExposureSetting(float(s["ratio"])))
    out = _out_dir(s) / (Path(s["input"]).stem + "_packed.slt")
    save_tensor(out, packed.data)
    print(f"wrote {out} shape={packed.data.shape}")
    return 0


def cmd_train(s: dict) -> int:
    from .data import make_corpus
    from .network import save_checkpoint
    from .training import (TrainPlan, finetune_joint, save_run, train_one_stage, train_stage1, train_stage2)
    from .tensor import set_default_dtype

    set_default_dtype(np.float32)
    seed = int(s["seed"])
    corpus = make_corpus(int(s["scenes"]), int(s["scene_size"]), seed)
    sensor = _sensor(s)
    out = _out_dir(s)

    def plan(phase, steps=None, lr=None, **kw):
        return TrainPlan(phase=phase, steps=int(steps or s["steps"]), patch_size=int(s["patch_size"]), seed=seed,
                         ratio=float(s["ratio"]), lr=float(lr or s["lr"]), eval_every=0, **kw)

    stage = s["stage"]
    if stage not in ("denoise", "raw2rgb", "all", "onestage"):
        raise ConfigError(f"unknown training stage {stage!r}")
    results = {}
    if stage in ("denoise", "all"):
        p = plan("stage1", noise_source=s["noise_source"])
        results["stage1"] = (train_stage1(p, sensor, corpus, network_config(s, "denoise")), p)
    if stage in ("raw2rgb", "all"):
        p = plan("stage2")
        results["stage2"] = (train_stage2(p, corpus, network_config(s, "raw2rgb")), p)
    if stage == "all":
        p = plan("joint", steps=s["joint_steps"], lr=s["joint_lr"])
        results["cascade"] = (finetune_joint(results["stage1"][0].model, results["stage2"][0].model, p,
                                             corpus, sensor), p)
    if stage == "onestage":
        p = plan("onestage", steps=int(s["steps"]) + int(s["joint_steps"]))
        results["onestage"] = (train_one_stage(p, corpus, sensor, network_config(s, "raw2rgb")), p)
    for name, (result, p) in results.items():
        paths = save_run(out, name, result, p)
        print(f"{name}: steps={p.steps} final_loss={result.curve[-1].total:.5f} checkpoint={paths['checkpoint']}")
    return 0


def _load_input(path: str, ratio: float) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".slt":
        return load_tensor(path)
    bayer, meta = load_raw(path)
    return preprocess(RawFrame.from_meta(bayer, meta), ExposureSetting(ratio)).data


def _crop_to(x: np.ndarray, factor: int) -> np.ndarray:
    h, w = (x.shape[0] // factor) * factor, (x.shape[1] // factor) * factor
    if (h, w) != x.shape[:2]:
        log.warning("cropping input %s to %dx%d (multiple of %d)", x.shape[:2], h, w, factor)
    if h == 0 or w == 0:
        raise InputError(f"input {x.shape[:2]} is smaller than the network factor {factor}")
    return x[:h, :w]


def cmd_infer(s: dict) -> int:
    if not s["input"]:
        raise InputError("infer needs --input (raw file or packed .slt)")
    if s["checkpoint"]:
        model = load_checkpoint(s["checkpoint"])
    else:
        log.warning("no --checkpoint given: using an untrained cascade built from the settings")
        model = Cascade(build(network_config(s, "denoise")), build(network_config(s, "raw2rgb")))
    factor = model.config.factor if isinstance(model, Network) else max(model.stage1.config.factor,
                                                                       model.stage2.config.factor)
    x = _crop_to(_load_input(s["input"], float(s["ratio"])), factor)
    tile = int(s["tile"])
    pred = infer_tiled(model, x, tile, int(s["overlap"])) if tile else model.predict(x)
    out = _out_dir(s) / (Path(s["input"]).stem + "_out")
    if pred.shape[2] == 3:
        write_image(out.with_suffix(".png"), np.clip(pred, 0.0, 1.0))
        print(f"wrote {out.with_suffix('.png')} size={pred.shape[1]}x{pred.shape[0]} mean={pred.mean():.6f}")
    else:
        save_tensor(out.with_suffix(".slt"), pred)
        print(f"wrote {out.with_suffix('.slt')} shape={pred.shape} mean={pred.mean():.6f}")
    return 0


def cost_reports(s: dict, width: int, height: int) -> dict[str, CostReport]:
    """Per-stage and total costs for a ``width`` x ``height`` Bayer frame (packed at half size)."""
    if width % 2 or height % 2:
        raise ConfigError(f"Bayer extents must be even, got {width}x{height}")
    h, w = height // 2, width // 2
    stage1 = build(network_config(s, "denoise")).cost(h, w)
    stage2 = build(network_config(s, "raw2rgb")).cost(h, w)
    return {"stage1": stage1, "stage2": stage2, "total": stage1 + stage2}


def cmd_cost(s: dict) -> int:
    width, height = parse_size(s["input"]) if s["input"] else PRESET_4K
    reports = cost_reports(s, width, height)
    for name, r in reports.items():
        print(f"{name} input={width}x{height} {r.line()} MACs={r.macs} params={r.params}")
    if s["out_dir"]:
        (_out_dir(s) / "cost.json").write_text(json.dumps(
            {name: {"macs": r.macs, "params": r.params, "spatial_macs": r.spatial_macs, "fixed_macs": r.fixed_macs}
             for name, r in reports.items()}, indent=2))
    return 0


def cmd_gradcheck(s: dict) -> int:
    from .gradsuite import run_suite, select
    results = run_suite(select(s["ops"]), seed=int(s["seed"]))
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"summary checks={len(results)} failed={len(failed)}")
    if failed:
        raise _GradientFailure(f"{len(failed)} gradient checks failed: {','.join(failed)}")
    return 0


class _GradientFailure(LowlightError):
    kind = "gradcheck"


def cmd_ablate(s: dict) -> int:
    from .ablation import run_grid
    rows = run_grid(s)
    out = _out_dir(s) / "ablation.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table", "setting", "metric", "psnr"])
        for row in rows:
            writer.writerow([row["table"], row["setting"], row["metric"], f"{row['psnr']:.4f}"])
    width = max(len(r["setting"]) for r in rows)
    for row in rows:
        print(f"{row['table']:<8} {row['setting']:<{width}} {row['metric']:<10} {row['psnr']:.3f}")
    print(f"wrote {out}")
    return 0


HANDLERS = {"calibrate": cmd_calibrate, "synth-chart": cmd_synth_chart, "simulate": cmd_simulate,
            "preprocess": cmd_preprocess, "train": cmd_train, "infer": cmd_infer, "cost": cmd_cost,
            "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}

# flags each command accepts (besides --config / --seed)
FLAGS = {
    "calibrate": ("input", "out_dir"),
    "synth-chart": ("out_dir", "iso"),
    "simulate": ("input", "out_dir", "ratio", "iso"),
    "preprocess": ("input", "out_dir", "ratio"),
    "train": ("out_dir", "ratio", "stage", "variant", "skip_mode"),
    "infer": ("input", "out_dir", "ratio", "checkpoint", "variant", "skip_mode"),
    "cost": ("input", "out_dir", "variant", "skip_mode"),
    "gradcheck": ("ops",),
    "ablate": ("out_dir", "ratio"),
}

FLAG_SPECS = {
    "ratio": dict(type=float, help="amplification ratio"),
    "iso": dict(type=int, help="ISO recorded in raw sidecars"),
    "out_dir": dict(help="directory for artifacts"),
    "checkpoint": dict(help="checkpoint archive"),
    "stage": dict(help="training stage: denoise, raw2rgb, all or onestage"),
    "variant": dict(help="SSAB variant"),
    "skip_mode": dict(help="skip fusion: sca, se, eca or add"),
    "input": dict(help="input file/directory, or WxH for cost"),
    "ops": dict(help="gradcheck selection: all, a group, or comma-separated names"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lowlight", description="Low-light raw restoration toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__)
        p.add_argument("--config", help="JSON settings file (overrides flags)")
        p.add_argument("--seed", type=int)
        for flag in FLAGS[name]:
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, **FLAG_SPECS[flag])
    return parser


def _error_line(kind: str, message: str) -> str:
    return f"error kind={kind} message={json.dumps(' '.join(str(message).split()))}"


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        settings = resolve(args.command, flags, args.config)
        print("config=" + json.dumps(settings, sort_keys=True, default=str))
        print(f"seed={settings['seed']}")
        sys.stdout.flush()
        return HANDLERS[args.command](settings)
    except LowlightError as exc:
        print(_error_line(getattr(exc, "kind", "error"), exc), file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
