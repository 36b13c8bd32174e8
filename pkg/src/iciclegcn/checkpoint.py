"""ICK1 checkpoints: a flat, ordered collection of named float64 arrays.

Layout (little-endian)::

    b"ICK1" | u32 count | count × entry
    entry := u32 name_len | utf-8 name | u32 ndim | u32[ndim] shape | f64[prod(shape)]

Values are stored as float64 so a checkpoint restores parameters bit for bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"ICK1"


def write_checkpoint(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError("bad magic", offset=0)
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise FormatError("truncated checkpoint", offset=pos)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        if pos + name_len > len(buf):
            raise FormatError("truncated checkpoint", offset=pos)
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape)) if ndim else 1
        if pos + 8 * n > len(buf):
            raise FormatError(f"truncated data for {name!r}", offset=pos)
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * n
    if pos != len(buf):
        raise FormatError("trailing bytes after last entry", offset=pos)
    return out
