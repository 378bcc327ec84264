"""Binary PGM (P5) and PPM (P6) files, 8-bit only."""

from __future__ import annotations

import os
import re

import numpy as np

_HEADER = re.compile(rb"^(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


class ImageFormatError(ValueError):
    pass


def encode_pnm(img: np.ndarray) -> bytes:
    """(h, w) uint8 -> P5 bytes, (h, w, 3) uint8 -> P6 bytes."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ImageFormatError(f"expected uint8 pixels, got {img.dtype}")
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode array of shape {img.shape}")
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def decode_pnm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if not m:
        raise ImageFormatError("not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ImageFormatError(f"only maxval 255 is supported, got {maxval}")
    ch = 1 if magic == b"P5" else 3
    body = data[m.end() :]
    need = w * h * ch
    if len(body) < need:
        raise ImageFormatError(f"truncated pixel data: {len(body)} of {need} bytes")
    img = np.frombuffer(body[:need], dtype=np.uint8)
    return img.reshape(h, w) if ch == 1 else img.reshape(h, w, 3)


def write_pnm(path: str | os.PathLike, img: np.ndarray) -> None:
    data = encode_pnm(img)
    with open(path, "wb") as fh:
        fh.write(data)


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pnm(fh.read())


def to_chw(img: np.ndarray, channels: int = 3) -> np.ndarray:
    """uint8 (h, w[, 3]) -> float32 (c, h, w) in [0, 1]."""
    x = img.astype(np.float32) / 255.0
    if x.ndim == 2:
        x = np.repeat(x[None], channels, axis=0)
    else:
        x = x.transpose(2, 0, 1)
        if channels == 1:
            x = x.mean(axis=0, keepdims=True)
    return np.ascontiguousarray(x)
