"""Binary PPM (P6) and PGM (P5) with maxval 255."""

from __future__ import annotations

import re

import numpy as np

from .tensorio import atomic_write_bytes

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+"
                     rb"(?:#[^\n]*\n\s*)*(\d+)\s")


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def _check_u8(x: np.ndarray) -> None:
    if x.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {x.dtype}; convert with to_uint8")


def encode_ppm(rgb: np.ndarray) -> bytes:
    """``[3, H, W]`` uint8 -> P6 bytes."""
    _check_u8(rgb)
    _, h, w = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb.transpose(1, 2, 0)).tobytes()


def encode_pgm(gray: np.ndarray) -> bytes:
    _check_u8(gray)
    h, w = gray.shape
    return f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(gray).tobytes()


def _decode(buf: bytes, magic: bytes, channels: int) -> np.ndarray:
    m = _HEADER.match(buf)
    if not m or m.group(1) != magic:
        raise ValueError(f"not a binary {magic.decode()} image")
    w, h, maxval = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = np.frombuffer(buf, dtype=np.uint8, offset=m.end())
    if data.size != w * h * channels:
        raise ValueError(f"payload has {data.size} bytes, expected {w * h * channels}")
    return data.reshape(h, w, channels) if channels > 1 else data.reshape(h, w)


def write_ppm(path, rgb: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(rgb))


def write_pgm(path, gray: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(gray))


def read_ppm(path) -> np.ndarray:
    """-> ``[3, H, W]`` uint8."""
    with open(path, "rb") as fh:
        return _decode(fh.read(), b"P6", 3).transpose(2, 0, 1).copy()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return _decode(fh.read(), b"P5", 1).copy()
