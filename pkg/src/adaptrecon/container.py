"""Binary tensor files used by datasets and checkpoints.

Layout (all little-endian): magic ``b"HAMR"``, u32 version, u32 rank,
rank x u64 dims, then float64 values (complex values as interleaved
real/imag pairs).
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HAMR"
VERSION = 1
DTYPES = {"real64": np.dtype("<f8"), "complex128": np.dtype("<c16")}


class ContainerError(ValueError):
    pass


def dtype_tag(arr: np.ndarray) -> str:
    return "complex128" if np.iscomplexobj(arr) else "real64"


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    tag = dtype_tag(arr)
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[tag]).tobytes()


def write_tensor(path: Path, arr: np.ndarray) -> dict:
    """Write ``arr`` and return its manifest entry (file, dtype, shape, sha256)."""
    blob = encode_tensor(arr)
    Path(path).write_bytes(blob)
    return {"file": Path(path).name, "dtype": dtype_tag(np.asarray(arr)),
            "shape": list(np.shape(arr)), "sha256": hashlib.sha256(blob).hexdigest()}


def read_tensor(path: Path, entry: dict | None = None) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"{path}: cannot read tensor file ({exc})") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic bytes")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported tensor format version {version}")
    if len(blob) < 12 + 8 * rank:
        raise ContainerError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", blob, 12)
    tag = (entry or {}).get("dtype", "real64")
    if tag not in DTYPES:
        raise ContainerError(f"{path}: unknown dtype tag {tag!r}")
    if entry is not None and list(shape) != list(entry["shape"]):
        raise ContainerError(f"{path}: shape {list(shape)} != manifest {entry['shape']}")
    offset = 12 + 8 * rank
    expected = int(np.prod(shape, dtype=np.int64)) * DTYPES[tag].itemsize
    if len(blob) - offset != expected:
        raise ContainerError(
            f"{path}: byte count mismatch, expected {expected} data bytes, found {len(blob) - offset}")
    if entry is not None and hashlib.sha256(blob).hexdigest() != entry["sha256"]:
        raise ContainerError(f"{path}: sha256 checksum mismatch for {entry['file']}")
    return np.frombuffer(blob, dtype=DTYPES[tag], offset=offset).reshape(shape).copy()
