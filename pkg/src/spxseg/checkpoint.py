"""Versioned binary checkpoint files for named parameter tensors.

Layout: an 8-byte magic header, a record count, then one record per
parameter holding (layer_id, shape, float64 values). Everything is
little-endian so files round-trip across machines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SPXSEG01"


def save_checkpoint(path: str | Path, params: list[tuple[str, Tensor]]) -> None:
    """Write (layer_id, shape, values) records for every parameter."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params:
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            shape = tensor.data.shape
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
            fh.write(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a {layer_id: array} mapping."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape)
            out[name] = data.astype(np.float64)
        return out


def restore_parameters(params: list[tuple[str, Tensor]], state: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live tensors, validating names and shapes."""
    for name, tensor in params:
        if name not in state:
            raise KeyError(f"checkpoint is missing parameter {name!r}")
        arr = state[name]
        if arr.shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint shape {arr.shape} does not match {name!r} shape {tensor.data.shape}"
            )
        tensor.data[...] = arr
