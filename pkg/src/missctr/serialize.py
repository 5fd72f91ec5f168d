"""Flat binary container for named float64 arrays.

One format serves embedding tables and full training checkpoints:
little-endian, record-per-array, no compression and no timestamps, so
identical inputs always produce identical bytes.

    magic "MISSARR1\\n"
    u32 record count
    per record: u16 name length, name (utf-8), u8 ndim,
                ndim x u64 dims, row-major float64 payload
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MISSARR1\n"


def save_arrays(path: str, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes())


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC):
        raise FormatError(f"{path}: bad magic, not an array container")
    off = len(MAGIC)

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(blob):
            raise FormatError(f"{path}: truncated container")
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    (count,) = take("<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload for {name}")
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape)
        off += nbytes
        out[name] = arr.astype(np.float64)  # writable copy
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes")
    return out
