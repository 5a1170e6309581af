"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import TrainingError
from .tensor import Param


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> None:
    """Update ``params`` in place from ``grads``; every param needs a gradient."""
    missing = [k for k in params if grads.get(k) is None]
    if missing:
        raise TrainingError(f"no gradient for parameter {missing[0]}")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Adam over a list of named Params (frozen ones, requires_grad=False, are skipped)."""

    def __init__(self, params: Sequence[Param], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise TrainingError("parameter names must be unique")
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        live = [p for p in self.params if p.requires_grad]
        adam_step({p.name: p.data for p in live}, {p.name: p.grad for p in live}, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
