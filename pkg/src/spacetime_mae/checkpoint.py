"""Named-tensor checkpoint files.

``b"MAECKPT1"`` | u32 count | count x {u32 name_len, name utf-8, u32 rank,
u32 extents[rank], float32 LE payload}.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MAECKPT1"


class CheckpointError(ValueError):
    pass


def encode_checkpoint(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a MAECKPT1 checkpoint")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape)) if rank else 1
        if pos + 4 * n > len(buf):
            raise CheckpointError(f"truncated payload for {name}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes")
    return out


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())
