"""Tensor value type and the gradient tape that records operations on it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

ROUTING_GROUPS = ("generator", "shared", "global", "patch")

_GROUP_PREFIXES = {
    "gen": "generator",
    "trunk": "shared",
    "global": "global",
    "patch": "patch",
}


class TapeError(RuntimeError):
    pass


class Tensor:
    """A numeric array with optional gradient tracking.

    Activations are rank-4 ``[N, C, H, W]``; parameters such as biases and
    dense weights may have lower rank.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        # tape that produced this tensor; None for leaves
        self._tape: Optional[GradTape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; implementations live in pggan.ops
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


class Parameter(Tensor):
    """A trainable tensor whose name encodes its routing group.

    The first dotted component of ``name`` selects the group: ``gen`` for the
    generator, ``trunk`` for the shared discriminator layers, ``global`` and
    ``patch`` for the two unshared heads.
    """

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        routing_group(name)

    @property
    def group(self) -> str:
        return routing_group(self.name)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def routing_group(name: str) -> str:
    head = name.split(".", 1)[0]
    try:
        return _GROUP_PREFIXES[head]
    except KeyError:
        raise ValueError(
            f"parameter name {name!r} must start with one of {sorted(_GROUP_PREFIXES)}"
        ) from None


@dataclass
class _Node:
    output: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


_active: list["GradTape"] = []


def active_tape() -> Optional["GradTape"]:
    return _active[-1] if _active else None


class GradTape:
    """Ordered record of executed operations.

    Operations record onto the innermost active tape whenever one of their
    inputs requires a gradient. A tape may be entered several times to extend
    the same graph; ``backward`` may run once per recording cycle and
    ``reset`` starts a new cycle.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "GradTape":
        if self.consumed:
            raise TapeError("tape already ran backward; call reset() before recording again")
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _active.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out_data, inputs, backward_fn, op: str) -> Tensor:
        out = Tensor(out_data, requires_grad=True)
        out._tape = self
        self.nodes.append(_Node(out, tuple(inputs), backward_fn, op))
        return out

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("backward called twice without reset()")
        if loss.shape != (1, 1, 1, 1):
            raise ValueError(f"loss must have shape [1,1,1,1], got {list(loss.shape)}")
        if loss._tape is not self:
            raise TapeError("loss was not produced on this tape")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            for inp, g in zip(node.inputs, node.backward(g_out)):
                if g is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if inp._tape is self:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = g if prev is None else prev + g
                else:
                    inp.grad = g.copy() if inp.grad is None else inp.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss``."""
    if loss._tape is None:
        raise TapeError("loss is not the output of a recorded operation")
    loss._tape.backward(loss)


class no_grad:
    """Suspend recording: operations inside produce untracked tensors."""

    def __enter__(self):
        self._saved = list(_active)
        _active.clear()
        return self

    def __exit__(self, *exc):
        _active.extend(self._saved)
