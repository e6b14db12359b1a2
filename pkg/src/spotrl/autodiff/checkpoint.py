"""Flat binary parameter checkpoints.

Layout, all integers little-endian:

    8 bytes   magic b"SPOTRLP1"
    1 byte    format version (currently 1)
    4 bytes   uint32 tensor count
    per tensor:
        2 bytes   uint16 name length
        n bytes   utf-8 name
        1 byte    uint8 rank
        4 bytes   uint32 per dimension
        8 bytes   float64 little-endian per element, C order

Round-trips are bit-exact for float64 arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SPOTRLP1"
VERSION = 1


class CheckpointError(ValueError):
    """Bad magic, wrong version, or a truncated/garbled file."""


def save_params(path, named: dict[str, np.ndarray | Tensor]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<BI", VERSION, len(named))]
    for name, value in named.items():
        arr = np.asarray(value.data if isinstance(value, Tensor) else value,
                         dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    view = memoryview(raw)
    if len(raw) < 13 or bytes(view[:8]) != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    version, count = struct.unpack_from("<BI", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 13
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            end = pos + 8 * n
            if end > len(raw):
                raise CheckpointError(f"{path}: truncated tensor data for {name!r}")
            out[name] = np.frombuffer(view[pos:end], dtype="<f8").reshape(shape).copy()
            pos = end
    except struct.error as err:
        raise CheckpointError(f"{path}: truncated checkpoint ({err})") from None
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return out


def mlp_state(mlp) -> dict[str, np.ndarray]:
    return {p.name: p.data for p in mlp.params()}


def load_into_mlp(mlp, state: dict[str, np.ndarray]) -> None:
    for p in mlp.params():
        if p.name not in state:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        if state[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name!r}: checkpoint shape {state[p.name].shape} "
                f"!= model shape {p.data.shape}")
        p.data[...] = state[p.name]
