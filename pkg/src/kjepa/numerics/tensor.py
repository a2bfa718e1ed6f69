"""Dense tensors and a reverse-mode tape.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape every op is a plain
numpy computation, which is how the EMA branch and evaluation run.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, NumericError

_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)

    def __mul__(self, scalar):
        from .ops import scale

        return scale(self, scalar)

    __rmul__ = __mul__


@dataclass
class _Node:
    out: Tensor
    parents: tuple
    backward: Callable


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; ops executed inside it are recorded in
    execution order, which is already topological.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()
        self._leaves: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward: Callable):
        for p in parents:
            if p.requires_grad and p._leaf:
                self._leaves.setdefault(id(p), p)
        out.requires_grad = True
        out._leaf = False
        self.nodes.append(_Node(out, tuple(parents), backward))
        self._produced.add(id(out))

    def reset(self):
        """Allow another backward pass; zeroes the grads of recorded leaves."""
        for leaf in self._leaves.values():
            leaf.zero_grad()
        self._consumed = False

    def backward(self, loss: Tensor, wrt: Iterable[Tensor] = ()):
        if self._consumed:
            raise ContractError("backward already run on this tape; call reset() first")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        self._consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        targets = dict(self._leaves)
        for t in wrt:
            targets.setdefault(id(t), t)
        for key, leaf in targets.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            elif not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient during backward")
            g = g.astype(leaf.data.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(tape: Tape, loss: Tensor, wrt: Iterable[Tensor] = ()):
    """Populate ``.grad`` on every leaf reachable from ``loss``."""
    tape.backward(loss, wrt)
