"""Binary clip files and flat dataset directories.

Layout of a ``.vmae`` file (all integers little-endian u32)::

    b"VMAE" | version | T | H | W | C | T*H*W*C float32 LE (frame, row, col, channel)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .video import VideoClip

MAGIC = b"VMAE"
VERSION = 1
_HEADER = struct.Struct("<4s5I")
LABELS_FILE = "labels.tsv"


class ClipFormatError(ValueError):
    pass


def encode_clip(clip: VideoClip) -> bytes:
    T, H, W, C = clip.shape
    payload = np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
    return _HEADER.pack(MAGIC, VERSION, T, H, W, C) + payload


def decode_clip(buf: bytes, source_id: str = "") -> VideoClip:
    if len(buf) < _HEADER.size:
        raise ClipFormatError("truncated clip header")
    magic, version, T, H, W, C = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ClipFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ClipFormatError(f"unsupported clip version {version}")
    n = T * H * W * C
    if len(buf) != _HEADER.size + 4 * n:
        raise ClipFormatError(f"payload size {len(buf) - _HEADER.size} != {4 * n}")
    frames = np.frombuffer(buf, dtype="<f4", count=n, offset=_HEADER.size).reshape(T, H, W, C)
    return VideoClip(frames.astype(np.float32), source_id=source_id)


def write_clip(path: str | Path, clip: VideoClip) -> None:
    Path(path).write_bytes(encode_clip(clip))


def read_clip(path: str | Path) -> VideoClip:
    path = Path(path)
    return decode_clip(path.read_bytes(), source_id=path.stem)


def write_labels(directory: str | Path, labels: dict[str, int]) -> None:
    lines = [f"{name}\t{int(lab)}\n" for name, lab in sorted(labels.items())]
    (Path(directory) / LABELS_FILE).write_text("".join(lines))


def read_labels(directory: str | Path) -> dict[str, int] | None:
    path = Path(directory) / LABELS_FILE
    if not path.exists():
        return None
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            name, lab = line.split("\t")
            out[name] = int(lab)
        except ValueError as exc:
            raise ClipFormatError(f"{path}:{lineno}: expected 'filename<TAB>int'") from exc
    return out
