"""Dense tensors with a tape-based reverse-mode gradient engine.

Every feature tensor is channel-last ``(H, W, C)``. Operations in
:mod:`lowlight.ops` record themselves on the innermost active
:class:`GradTape`; :func:`backward` replays that record in exact reverse
order.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ShapeError

_DTYPE = np.float64
_TAPES: list["GradTape"] = []


def default_dtype() -> type:
    return _DTYPE


def set_default_dtype(dtype) -> None:
    """Switch between f64 (test mode) and f32 (run mode)."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype


@contextmanager
def dtype_mode(dtype) -> Iterator[None]:
    previous = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        self.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar, all routed through ops so the tape sees them
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Param(Tensor):
    """A trainable leaf tensor with a registry name (dotted path)."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


class GradTape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; operations executed inside it whose inputs
    require gradients are appended in execution order.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self.entries.append((out, inputs, backward_fn))


def active_tape() -> GradTape | None:
    return _TAPES[-1] if _TAPES else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording (e.g. for evaluation passes)."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op output and record it when any input needs a gradient.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input.
    """
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs, dtype=data.dtype)
    if needs:
        tape.record(out, tuple(inputs), backward_fn)
    return out


def backward(loss: Tensor, tape: GradTape) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` through ``tape``.

    Leaf gradients accumulate across calls; intermediate gradients live only
    for the duration of one call.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(out) for out, _, _ in tape.entries}
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, fn in reversed(tape.entries):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        grads = fn(g)
        for t, gi in zip(inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"gradient shape {gi.shape} does not match input {t.shape}")
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = pending[key].astype(t.data.dtype, copy=False)
        t.grad = g.copy() if t.grad is None else t.grad + g
