"""Binary parameter snapshots.

Layout (little-endian)::

    b"PPPCKPT1"  u32 version
    u32 len + arch name (utf-8)   u32 epoch
    u32 len + metadata JSON (utf-8)
    u32 tensor count, then per tensor:
        u32 len + name   u32 ndim   u32 dims[ndim]   float32 data
    u64 checksum: blake2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .network import ParamSet

MAGIC = b"PPPCKPT1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: str
    epoch: int
    params: ParamSet
    meta: dict = field(default_factory=dict)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{k}.{n}", a) for k, d in sorted(self.params.items()) for n, a in sorted(d.items())]


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _str(ck.arch), struct.pack("<I", ck.epoch)]
    parts.append(_str(json.dumps(ck.meta, sort_keys=True)))
    tensors = ck.tensors()
    parts.append(struct.pack("<I", len(tensors)))
    for name, a in tensors:
        a = np.asarray(a)
        if a.dtype != np.float32:
            raise CheckpointError(f"{name}: only float32 tensors are stored, got {a.dtype}")
        parts.append(_str(name))
        parts.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def str(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, stored = data[:-8], data[-8:]
    if _checksum(body) != stored:
        raise CheckpointError("checksum mismatch: checkpoint is corrupted")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = r.str()
    epoch = r.u32()
    meta = json.loads(r.str())
    params: ParamSet = {}
    for _ in range(r.u32()):
        name = r.str()
        ndim = r.u32()
        dims = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        a = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        key, _, tname = name.partition(".")
        params.setdefault(key, {})[tname] = a
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after tensor table")
    return Checkpoint(arch, epoch, params, meta)


def save(path: str | os.PathLike, ck: Checkpoint) -> None:
    data = encode(ck)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
