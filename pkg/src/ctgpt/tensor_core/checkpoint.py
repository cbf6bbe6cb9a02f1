"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"CKPT"                 magic, 4 bytes
    u8   version            currently 1
    u32  entry count
    per entry:
      u16  name length, then UTF-8 name bytes
      u8   frozen flag (0/1)
      u8   rank, then rank x u32 axis lengths
      f32  payload, product(shape) scalars, row-major

Payloads are always stored as float32, so a float32 model round-trips bitwise.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, List, NamedTuple

import numpy as np

from ..errors import FormatError

MAGIC = b"CKPT"
VERSION = 1


class CheckpointEntry(NamedTuple):
    name: str
    data: np.ndarray
    frozen: bool


def save_checkpoint(entries: Iterable, path) -> None:
    """``entries`` may be Parameters or CheckpointEntry tuples."""
    chunks = []
    items = list(entries)
    chunks.append(MAGIC + struct.pack("<BI", VERSION, len(items)))
    for e in items:
        name = e.name.encode("utf-8")
        arr = np.ascontiguousarray(e.data, dtype="<f4")
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<BB", int(bool(e.frozen)), arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> List[CheckpointEntry]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {buf[:4]!r}")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = take("<BI")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    out = []
    for _ in range(count):
        (n,) = take("<H")
        if pos + n > len(buf):
            raise FormatError(f"{path}: truncated checkpoint")
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        frozen, rank = take("<BB")
        shape = take(f"<{rank}I")
        size = int(np.prod(shape, dtype=np.int64)) * 4
        if pos + size > len(buf):
            raise FormatError(f"{path}: truncated payload for {name}")
        data = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += size
        out.append(CheckpointEntry(name, data, bool(frozen)))
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out
