"""Bit-exact tensor files: ``STEN`` magic, u32 rank, u32 extents, f64 payload (all LE)."""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"STEN"


def dumps(arr) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise ValueError("not a STEN tensor file (bad magic)")
    (rank,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != 8 * count:
        raise ValueError(f"STEN payload is {len(buf) - offset} bytes, expected {8 * count}")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, arr) -> None:
    atomic_write_bytes(path, dumps(arr))


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return loads(fh.read())
