"""Finite-difference suite over every differentiable op and the network composites."""

from __future__ import annotations

import zlib
from typing import Callable, Iterable

import numpy as np

from . import ops
from .blocks import SSA1, SSA2, SSAB, VARIANTS, ECASkip, SCA, SESkip
from .errors import ConfigError
from .gradcheck import GradCheckResult, check_gradients, projected
from .losses import LossConfig, combined_loss, l1_loss, msssim
from .network import Cascade, build, toy_config
from .tensor import Tensor, dtype_mode

OP_THRESHOLD = 1e-4
MSSSIM_THRESHOLD = 1e-3

Case = Callable[[np.random.Generator], GradCheckResult]
CASES: dict[str, Case] = {}
GROUPS: dict[str, list[str]] = {"ops": [], "blocks": [], "network": [], "loss": []}


def _case(name: str, group: str):
    def register(fn: Case) -> Case:
        CASES[name] = fn
        GROUPS[group].append(name)
        return fn
    return register


def _t(rng, *shape, lo=None, hi=None) -> Tensor:
    if lo is None:
        return Tensor(rng.standard_normal(shape), requires_grad=True)
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _away_from_zero(rng, *shape) -> Tensor:
    mag = rng.uniform(0.2, 1.0, size=shape)
    return Tensor(mag * rng.choice([-1.0, 1.0], size=shape), requires_grad=True)


def _check(name, out_fn, tensors, *, threshold=OP_THRESHOLD, max_entries=None, scalar=False,
           relative_floor=0.0) -> GradCheckResult:
    fn = out_fn if scalar else projected(out_fn, out_fn().shape)
    return check_gradients(fn, tensors, name=name, threshold=threshold, max_entries=max_entries,
                           relative_floor=relative_floor)


def _binary(name, op):
    @_case(name, "ops")
    def run(rng):
        a, b = _t(rng, 4, 5, 3), _t(rng, 5, 3)
        if name == "div":
            b = _away_from_zero(rng, 5, 3)
        return _check(name, lambda: op(a, b), [a, b])


for _name, _op in [("add", ops.add), ("sub", ops.sub), ("mul", ops.mul), ("div", ops.div)]:
    _binary(_name, _op)


@_case("pow_scalar", "ops")
def _pow(rng):
    x = _t(rng, 4, 4, 2, lo=0.2, hi=2.0)
    return _check("pow_scalar", lambda: ops.pow_scalar(x, 0.37), [x])


@_case("clamp_min", "ops")
def _clamp(rng):
    x = _away_from_zero(rng, 4, 4, 2)
    return _check("clamp_min", lambda: ops.clamp_min(x, 0.0), [x])


@_case("abs", "ops")
def _abs(rng):
    x = _away_from_zero(rng, 4, 4, 2)
    return _check("abs", lambda: ops.abs(x), [x])


@_case("sum", "ops")
def _sum(rng):
    x = _t(rng, 3, 4, 2)
    return _check("sum", lambda: ops.sum(ops.mul(x, x)), [x], scalar=True)


@_case("mean", "ops")
def _mean(rng):
    x = _t(rng, 3, 4, 2)
    return _check("mean", lambda: ops.mean(x, axis=1), [x])


@_case("spatial_mean", "ops")
def _spatial_mean(rng):
    x = _t(rng, 3, 4, 2)
    return _check("spatial_mean", lambda: ops.spatial_mean(x), [x])


@_case("reshape", "ops")
def _reshape(rng):
    x = _t(rng, 3, 4, 2)
    return _check("reshape", lambda: ops.reshape(x, (12, 2)), [x])


@_case("concat", "ops")
def _concat(rng):
    a, b = _t(rng, 3, 3, 2), _t(rng, 3, 3, 5)
    return _check("concat", lambda: ops.concat([a, b], axis=-1), [a, b])


@_case("channel_slice", "ops")
def _slice(rng):
    x = _t(rng, 3, 3, 6)
    return _check("channel_slice", lambda: ops.channel_slice(x, 2, 5), [x])


@_case("pixel_shuffle", "ops")
def _shuffle(rng):
    x = _t(rng, 3, 2, 8)
    return _check("pixel_shuffle", lambda: ops.pixel_shuffle(x, 2), [x])


@_case("pixel_unshuffle", "ops")
def _unshuffle(rng):
    x = _t(rng, 4, 6, 3)
    return _check("pixel_unshuffle", lambda: ops.pixel_unshuffle(x, 2), [x])


@_case("linear", "ops")
def _linear(rng):
    x, w, b = _t(rng, 5, 6), _t(rng, 6, 3), _t(rng, 3)
    return _check("linear", lambda: ops.linear(x, w, b), [x, w, b])


@_case("conv1x1", "ops")
def _conv1x1(rng):
    x, w, b = _t(rng, 3, 4, 5), _t(rng, 5, 3), _t(rng, 3)
    return _check("conv1x1", lambda: ops.conv1x1(x, w, b), [x, w, b])


@_case("dwconv3x3", "ops")
def _dwconv(rng):
    x, k, b = _t(rng, 4, 5, 3), _t(rng, 3, 3, 3), _t(rng, 3)
    return _check("dwconv3x3", lambda: ops.dwconv3x3(x, k, b), [x, k, b])


@_case("channel_conv1d", "ops")
def _cconv(rng):
    v, taps = _t(rng, 7), _t(rng, 3)
    return _check("channel_conv1d", lambda: ops.channel_conv1d(v, taps), [v, taps])


@_case("layer_norm", "ops")
def _layer_norm(rng):
    x, g, o = _t(rng, 3, 4, 6), _t(rng, 6), _t(rng, 6)
    return _check("layer_norm", lambda: ops.layer_norm(x, g, o), [x, g, o])


@_case("softmax_over_positions", "ops")
def _softmax(rng):
    x = _t(rng, 10, 2)
    return _check("softmax_over_positions", lambda: ops.softmax_over_positions(x), [x])


@_case("gelu", "ops")
def _gelu(rng):
    x = _t(rng, 4, 4, 3)
    return _check("gelu", lambda: ops.gelu(x), [x])


@_case("sigmoid", "ops")
def _sigmoid(rng):
    x = _t(rng, 4, 4, 3)
    return _check("sigmoid", lambda: ops.sigmoid(x), [x])


@_case("head_project", "ops")
def _head_project(rng):
    q, w = _t(rng, 6, 2, 3), _t(rng, 2, 3)
    return _check("head_project", lambda: ops.head_project(q, w), [q, w])


@_case("global_context", "ops")
def _global_context(rng):
    a, q = _t(rng, 6, 2), _t(rng, 6, 2, 3)
    return _check("global_context", lambda: ops.global_context(a, q), [a, q])


@_case("separable_filter", "ops")
def _filter(rng):
    x = _t(rng, 9, 8, 2)
    taps = np.array([0.2, 0.5, 0.3])
    return _check("separable_filter", lambda: ops.separable_filter(x, taps), [x])


@_case("avg_pool2", "ops")
def _pool(rng):
    x = _t(rng, 6, 4, 2)
    return _check("avg_pool2", lambda: ops.avg_pool2(x), [x])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _images(rng, size=32, channels=1):
    target = rng.uniform(0.1, 0.9, size=(size, size, channels))
    # |pred - target| stays away from the L1 kink
    offset = np.where(rng.random(target.shape) < 0.5, -1.0, 1.0) * rng.uniform(0.02, 0.1, target.shape)
    return Tensor(target + offset, requires_grad=True), target


@_case("l1_loss", "loss")
def _l1(rng):
    pred, target = _images(rng, 8, channels=3)
    return _check("l1_loss", lambda: l1_loss(pred, target), [pred], scalar=True)


_SMALL_MSSSIM = LossConfig(msssim_levels=3, msssim_window=7)


@_case("msssim", "loss")
def _msssim(rng):
    pred, target = _images(rng)
    return _check("msssim", lambda: msssim(pred, target, _SMALL_MSSSIM), [pred], scalar=True,
                  threshold=MSSSIM_THRESHOLD, max_entries=200)


@_case("combined_loss", "loss")
def _combined(rng):
    pred, target = _images(rng)
    return _check("combined_loss", lambda: combined_loss(pred, target, _SMALL_MSSSIM)[0], [pred], scalar=True,
                  threshold=MSSSIM_THRESHOLD, max_entries=200)


# Whole networks reach gradients around 1e-7 (nearly dead gelu units in the
# skip MLPs) where central differences carry 1e-9..1e-7 noise; such entries
# are judged against 1e-3 of the largest gradient in the check instead.
NETWORK_FLOOR = 1e-3

# ---------------------------------------------------------------------------
# blocks and networks
# ---------------------------------------------------------------------------

def _module_case(name, group, make, shapes, max_entries=12, relative_floor=0.0):
    @_case(name, group)
    def run(rng):
        module, call = make(rng)
        inputs = [_t(rng, *s) for s in shapes]
        tensors = inputs + module.parameters()
        return _check(name, lambda: call(*inputs), tensors, max_entries=max_entries,
                      relative_floor=relative_floor)


def _randomize(module, rng):
    # zero-initialized gains and biases hide gradient bugs
    for p in module.parameters():
        p.data[:] = p.data + 0.3 * rng.standard_normal(p.shape)
    return module


def _block(cls, **kw):
    def make(rng):
        m = _randomize(cls(8, rng=rng, **kw), rng)
        return m, m
    return make


_module_case("ssa1", "blocks", _block(SSA1, heads=2), [(4, 4, 8)])
_module_case("ssa2", "blocks", _block(SSA2, heads=2), [(4, 4, 8)])
for _variant in VARIANTS:
    _module_case(f"ssab_{_variant}", "blocks", _block(SSAB, heads=2, variant=_variant), [(4, 4, 8)])
_module_case("sca", "blocks", _block(SCA), [(4, 4, 8), (4, 4, 8)])
_module_case("se_skip", "blocks", _block(SESkip), [(4, 4, 8), (4, 4, 8)])
_module_case("eca_skip", "blocks", _block(ECASkip), [(4, 4, 8), (4, 4, 8)])


def _net(stage):
    def make(rng):
        m = _randomize(build(toy_config(stage=stage, seed=int(rng.integers(1000)))), rng)
        return m, m
    return make


_module_case("unet_denoise", "network", _net("denoise"), [(4, 4, 4)], max_entries=6,
             relative_floor=NETWORK_FLOOR)
_module_case("unet_raw2rgb", "network", _net("raw2rgb"), [(4, 4, 4)], max_entries=6,
             relative_floor=NETWORK_FLOOR)


def _cascade(rng):
    m = _randomize(Cascade(build(toy_config(stage="denoise")), build(toy_config(stage="raw2rgb", seed=1))), rng)
    return m, m


_module_case("cascade", "network", _cascade, [(4, 4, 4)], max_entries=4, relative_floor=NETWORK_FLOOR)


# ---------------------------------------------------------------------------

def select(spec: str) -> list[str]:
    """Resolve ``all``, a group name, or a comma list of case names."""
    names: list[str] = []
    for item in (s.strip() for s in spec.split(",") if s.strip()):
        if item == "all":
            names.extend(CASES)
        elif item in GROUPS:
            names.extend(GROUPS[item])
        elif item in CASES:
            names.append(item)
        else:
            raise ConfigError(f"unknown gradcheck case {item!r}")
    return list(dict.fromkeys(names))


def run_suite(names: Iterable[str] | None = None, seed: int = 0) -> list[GradCheckResult]:
    names = list(CASES) if names is None else list(names)
    results = []
    with dtype_mode(np.float64):
        for name in names:
            results.append(CASES[name](np.random.default_rng([seed, zlib.crc32(name.encode())])))
    return results
