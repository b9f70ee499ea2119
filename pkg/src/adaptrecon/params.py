"""Helpers for parameter dataclasses whose fields are arrays or bound tensors."""
from __future__ import annotations

import dataclasses
from typing import Iterator

import numpy as np

from .diffmath import Tape, Tensor


def conv_init(rng: np.random.Generator, out_ch: int, in_ch: int, k: int) -> np.ndarray:
    """Centered uniform weights with fan-in scaling."""
    bound = 1.0 / np.sqrt(in_ch * k * k)
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))


def array_fields(obj) -> Iterator[tuple[str, object]]:
    for f in dataclasses.fields(obj):
        if f.metadata.get("param", True) is False:
            continue
        value = getattr(obj, f.name)
        if isinstance(value, (np.ndarray, Tensor)):
            yield f.name, value


def named_arrays(obj, prefix: str) -> dict[str, np.ndarray]:
    return {f"{prefix}{name}": (v.data if isinstance(v, Tensor) else v)
            for name, v in array_fields(obj)}


def bind(obj, tape: Tape, prefix: str, trainable=None):
    """Copy of ``obj`` whose selected array fields are leaves on ``tape``.

    ``trainable`` is a predicate over full parameter names; unselected
    fields stay plain arrays and so receive no gradient.
    """
    updates = {}
    for name, value in array_fields(obj):
        full = f"{prefix}{name}"
        if trainable is None or trainable(full):
            updates[name] = tape.watch(value, name=full)
    return dataclasses.replace(obj, **updates)


def load_arrays(obj, prefix: str, arrays: dict[str, np.ndarray]):
    updates = {}
    for name, value in array_fields(obj):
        key = f"{prefix}{name}"
        if key not in arrays:
            raise KeyError(f"missing parameter {key!r}")
        if arrays[key].shape != value.shape:
            raise ValueError(f"parameter {key!r} has shape {arrays[key].shape}, expected {value.shape}")
        updates[name] = np.array(arrays[key], dtype=np.float64)
    return dataclasses.replace(obj, **updates)


def count(obj) -> int:
    return int(sum(np.size(v.data if isinstance(v, Tensor) else v) for _, v in array_fields(obj)))
