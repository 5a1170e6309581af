"""Parameter containers with dotted-path naming and state dictionaries."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .errors import LoadError
from .tensor import Param, default_dtype


class Module:
    """Base class: Params and child Modules found in attributes form the registry.

    A list attribute ``blocks`` holding modules yields children named
    ``blocks0``, ``blocks1``, ...
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, value in vars(self).items():
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, Param):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path)
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}{i}")

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name in sorted(set(own) | set(state)):
            if name not in state:
                raise LoadError(f"checkpoint is missing parameter {name}")
            if name not in own:
                raise LoadError(f"checkpoint has unexpected parameter {name}")
            if own[name].shape != state[name].shape:
                raise LoadError(
                    f"parameter {name}: checkpoint shape {state[name].shape} != model shape {own[name].shape}")
        for name, p in own.items():
            p.data = np.ascontiguousarray(state[name], dtype=p.data.dtype)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Param:
    """Fan-in Kaiming-uniform with negative slope sqrt(5), i.e. bound 1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return Param(rng.uniform(-bound, bound, size=shape).astype(default_dtype()))


def zeros(shape) -> Param:
    return Param(np.zeros(shape, dtype=default_dtype()))


def ones(shape) -> Param:
    return Param(np.ones(shape, dtype=default_dtype()))
