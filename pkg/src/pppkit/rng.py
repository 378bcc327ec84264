"""Counter-based random streams.

Every random draw in the toolkit comes from a Philox generator keyed by
``(root seed, purpose, *tag)``. A draw therefore depends only on its tag, never
on how many draws happened before it or on which thread asked for it.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_id(purpose: str | int) -> int:
    if isinstance(purpose, int):
        return purpose & 0xFFFFFFFF
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """A named family of independent random streams under one root seed."""

    seed: int
    purpose: str | int = 0

    def child(self, purpose: str | int) -> "RngStream":
        # Fold the parent purpose into the seed so children of different
        # parents never collide.
        mixed = (self.seed * 0x9E3779B97F4A7C15 + _purpose_id(self.purpose)) & _MASK64
        return RngStream(mixed, purpose)

    def generator(self, *tag: int) -> np.random.Generator:
        entropy = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF, _purpose_id(self.purpose)]
        for t in tag:
            t = int(t)
            if t < 0:
                raise ValueError(f"rng tags must be non-negative, got {t}")
            entropy.extend([t & 0xFFFFFFFF, (t >> 32) & 0xFFFFFFFF])
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def normal(self, *tag: int, size) -> np.ndarray:
        return self.generator(*tag).standard_normal(size)

    def uniform(self, *tag: int, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self.generator(*tag).uniform(low, high, size)
