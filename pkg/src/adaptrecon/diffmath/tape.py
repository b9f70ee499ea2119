"""Tape-based reverse-mode differentiation.

A :class:`Tape` records every operation applied to the tensors it watches.
Calling :meth:`Tape.backward` walks the records in reverse and returns the
gradient of a scalar output with respect to every watched leaf.

Complex tensors carry gradients in the convention ``dL/dRe + 1j * dL/dIm``,
so the gradient of a real loss through a complex-linear map ``A`` is
``A^H`` applied to the output gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]
    is_complex: bool
    name: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"


class Tensor:
    """Dense real64/complex128 array, optionally attached to a tape."""

    __slots__ = ("data", "tape", "index", "name")
    __array_priority__ = 1000

    def __init__(self, data, tape: "Tape | None" = None, index: int | None = None,
                 name: str | None = None):
        arr = np.asarray(data)
        if np.iscomplexobj(arr):
            arr = arr.astype(np.complex128, copy=False)
        else:
            arr = arr.astype(np.float64, copy=False)
        self.data = arr
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_complex(self) -> bool:
        return self.data.dtype == np.complex128

    @property
    def is_leaf(self) -> bool:
        return self.tape is not None and self.tape.nodes[self.index].is_leaf

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self) -> str:
        kind = "complex128" if self.is_complex else "real64"
        where = f", node={self.index}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, {kind}{where})"

    # operator sugar, resolved lazily to avoid a circular import
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Gradients:
    """Gradient map returned by :meth:`Tape.backward`, keyed by leaf tensor or leaf name."""

    def __init__(self, tape: "Tape", grads: list[np.ndarray | None]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, key) -> np.ndarray:
        if isinstance(key, str):
            if key not in self._tape.names:
                raise KeyError(f"no leaf named {key!r} on this tape")
            idx = self._tape.names[key]
        elif isinstance(key, Tensor):
            if key.tape is not self._tape:
                raise TapeError("tensor does not belong to this tape")
            idx = key.index
        else:
            raise TypeError(f"cannot index gradients with {type(key).__name__}")
        node = self._tape.nodes[idx]
        if not node.is_leaf:
            raise TapeError(f"gradient requested for non-leaf node {idx} ({node.op})")
        g = self._grads[idx]
        if g is None:
            return np.zeros(node.shape, np.complex128 if node.is_complex else np.float64)
        return g

    def __contains__(self, key) -> bool:
        return key in self._tape.names

    def by_name(self) -> dict[str, np.ndarray]:
        return {name: self[name] for name in self._tape.names}


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.names: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def watch(self, data, name: str | None = None) -> Tensor:
        """Register a leaf whose gradient ``backward`` will report."""
        t = Tensor(np.array(data, copy=True))
        if name is not None:
            if name in self.names:
                raise TapeError(f"duplicate leaf name {name!r}")
            self.names[name] = len(self.nodes)
        self.nodes.append(Node("leaf", (), None, t.shape, t.is_complex, name))
        t.tape, t.index, t.name = self, len(self.nodes) - 1, name
        return t

    def record(self, op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp) -> Tensor:
        idx = tuple(t.index if t.tape is self else None for t in inputs)
        t = Tensor(out)
        self.nodes.append(Node(op, idx, vjp, t.shape, t.is_complex))
        t.tape, t.index = self, len(self.nodes) - 1
        return t

    def backward(self, output: Tensor, seed=None, retain: bool = False) -> Gradients:
        """Reverse sweep from ``output``.

        Unless ``retain`` is set, each node's closure is dropped once used so
        saved activations are freed during the sweep; the tape then cannot be
        differentiated again.
        """
        if output.tape is not self:
            raise TapeError("output was not recorded on this tape")
        if seed is None:
            if output.data.size != 1:
                raise TapeError("seed gradient required for non-scalar output")
            seed = np.ones(output.shape)
        seed = np.asarray(seed)
        if seed.shape != output.shape:
            raise TapeError(f"seed shape {seed.shape} != output shape {output.shape}")
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        grads[output.index] = seed.astype(np.complex128 if output.is_complex else np.float64)
        for i in range(output.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.is_leaf:
                continue
            if node.vjp is None:
                raise TapeError("tape already consumed by an earlier backward(retain=False)")
            for j, gj in zip(node.inputs, node.vjp(g)):
                if j is None or gj is None:
                    continue
                grads[j] = gj if grads[j] is None else grads[j] + gj
            if not retain:
                node.vjp = None
            if i != output.index:
                grads[i] = None  # interior gradients are not queryable
        return Gradients(self, grads)


def backward(tape: Tape, output: Tensor, seed_grad=None) -> Gradients:
    return tape.backward(output, seed_grad)
