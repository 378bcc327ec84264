"""Measurement images and the synthetic classification task.

Measurement canvases come either from a directory of binary PGM/PPM files or
from a procedural multi-octave value-noise generator. Both hand out
centre crops of a requested canvas size as float32 NCHW in [0, 1].
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .imageio import read_pnm, to_chw, write_pnm
from .rng import RngStream

GENERATOR = "value-noise/1"
# Lattice spacing of each octave, coarse to fine, and their weights.
OCTAVES = (128, 64, 32, 16, 8, 4, 2)
PERSISTENCE = 1.0
SHARED = 0.65  # share of the luminance field in each colour channel
CONTRAST = 2.2


def _smooth(t: np.ndarray) -> np.ndarray:
    return t * t * (3 - 2 * t)


def _lattice_axis(coords: np.ndarray, cell: int):
    q = coords / cell
    i0 = np.floor(q).astype(np.int64)
    return i0, _smooth(q - i0)


def _octave(g: np.random.Generator, size: int, cell: int, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    n = size // cell + 2
    lattice = g.random((n, n))
    r0, tr = _lattice_axis(rows, cell)
    c0, tc = _lattice_axis(cols, cell)
    top = lattice[r0][:, c0] * (1 - tc) + lattice[r0][:, c0 + 1] * tc
    bot = lattice[r0 + 1][:, c0] * (1 - tc) + lattice[r0 + 1][:, c0 + 1] * tc
    return top * (1 - tr)[:, None] + bot * tr[:, None]


def _field(rng: RngStream, index: int, tag: int, size: int, rows, cols) -> np.ndarray:
    total = np.zeros((rows.size, cols.size))
    weight = 0.0
    for o, cell in enumerate(OCTAVES):
        a = PERSISTENCE**o
        total += a * _octave(rng.generator(index, tag, o), size, cell, rows, cols)
        weight += a
    return total / weight


def noise_image(seed: int, index: int, size: int, window: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """RGB value-noise image ``index`` of a ``size`` square; float64 (3, h, w).

    ``window = (top, left, h, w)`` evaluates only that part of the image, with
    the same values a full render would have there.
    """
    top, left, h, w = (0, 0, size, size) if window is None else window
    if top < 0 or left < 0 or top + h > size or left + w > size:
        raise ValueError(f"window {window} outside a {size}x{size} image")
    rng = RngStream(seed, "value-noise")
    rows = np.arange(top, top + h, dtype=np.float64)
    cols = np.arange(left, left + w, dtype=np.float64)
    lum = _field(rng, index, 0, size, rows, cols)
    out = np.empty((3, h, w))
    for c in range(3):
        v = SHARED * lum + (1 - SHARED) * _field(rng, index, c + 1, size, rows, cols)
        out[c] = np.clip(0.5 + CONTRAST * (v - 0.5), 0.0, 1.0)
    return out


def quantize(img: np.ndarray) -> np.ndarray:
    """float (3, h, w) in [0, 1] -> uint8 (h, w, 3)."""
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def gen_data(out_dir: str | os.PathLike, count: int = 480, size: int = 2048, seed: int = 0) -> Path:
    """Write ``count`` PPM images plus ``manifest.json``; returns the manifest path."""
    if count < 1 or size < 1:
        raise ValueError("count and size must be positive")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        name = f"img_{i:04d}.ppm"
        write_pnm(out / name, quantize(noise_image(seed, i, size)))
        entries.append({"file": name, "seed": seed, "index": i})
    manifest = {"generator": GENERATOR, "seed": seed, "count": count, "size": size, "images": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# -------------------------------------------------------------- image sources


class DatasetError(ValueError):
    """An image source cannot serve the requested canvases."""


class ImageSource:
    """Sliceable view of ``len(self)`` canvases of ``canvas`` (h, w) pixels."""

    canvas: tuple[int, int]

    def __len__(self) -> int:
        raise NotImplementedError

    def load(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def __getitem__(self, key):
        if isinstance(key, slice):
            idx = range(*key.indices(len(self)))
            return np.stack([self.load(i) for i in idx]) if idx else np.zeros((0, 3) + self.canvas, np.float32)
        if not -len(self) <= key < len(self):
            raise IndexError(key)
        return self.load(key % len(self))

    def limit(self, n: int) -> "ImageSource":
        return _Limited(self, n)


class _Limited(ImageSource):
    def __init__(self, base: ImageSource, n: int):
        self.base, self.n, self.canvas = base, min(n, len(base)), base.canvas

    def __len__(self):
        return self.n

    def load(self, i):
        return self.base.load(i)


def _centre(size: tuple[int, int], canvas: tuple[int, int]) -> tuple[int, int]:
    return (size[0] - canvas[0]) // 2, (size[1] - canvas[1]) // 2


class ProceduralSource(ImageSource):
    def __init__(self, seed: int, count: int, size: int, canvas: tuple[int, int]):
        if canvas[0] > size or canvas[1] > size:
            raise DatasetError(f"images of {size} px are smaller than the {canvas} canvas")
        self.seed, self.count, self.size, self.canvas = seed, count, size, tuple(canvas)

    def __len__(self):
        return self.count

    def load(self, i):
        t, l = _centre((self.size, self.size), self.canvas)
        img = noise_image(self.seed, i, self.size, (t, l) + self.canvas)
        # round-trip through 8 bits so procedural and written images agree
        return (np.round(img * 255) / 255).astype(np.float32)


class DirectorySource(ImageSource):
    EXTENSIONS = (".ppm", ".pgm")

    def __init__(self, path: str | os.PathLike, canvas: tuple[int, int]):
        self.path = Path(path)
        if not self.path.is_dir():
            raise FileNotFoundError(f"image directory {self.path} does not exist")
        self.files = sorted(p for p in self.path.iterdir() if p.suffix.lower() in self.EXTENSIONS)
        if not self.files:
            raise DatasetError(f"no PGM/PPM images in {self.path}")
        self.canvas = tuple(canvas)

    def __len__(self):
        return len(self.files)

    def load(self, i):
        img = read_pnm(self.files[i])
        h, w = img.shape[:2]
        if h < self.canvas[0] or w < self.canvas[1]:
            raise DatasetError(f"{self.files[i].name} is {h}x{w}, smaller than the {self.canvas} canvas")
        t, l = _centre((h, w), self.canvas)
        return to_chw(img[t : t + self.canvas[0], l : l + self.canvas[1]])


def standardize(x: np.ndarray, norm: tuple[float, float] | None) -> np.ndarray:
    """``(x - mean) / std`` as float32; identity when ``norm`` is None."""
    if norm is None:
        return x
    mean, std = norm
    return ((np.asarray(x, dtype=np.float32) - np.float32(mean)) / np.float32(std)).astype(np.float32)


class Standardized(ImageSource):
    def __init__(self, base: ImageSource, norm: tuple[float, float] | None):
        self.base, self.norm, self.canvas = base, norm, base.canvas

    def __len__(self):
        return len(self.base)

    def load(self, i):
        return standardize(self.base.load(i), self.norm)


# ------------------------------------------------------------ classify task


def make_classify(n: int, size: int, seed: int, split: str = "train", grid: int = 2):
    """``grid * grid``-way task: which cell of a regular grid holds a striped patch.

    Backgrounds are value-noise crops like the measurement images, so the
    label depends only on where the patch sits. Returns float32
    (n, 3, size, size) images and int labels in ``[0, grid**2)``.
    """
    if grid < 1 or size // grid < 2:
        raise ValueError(f"a {grid}x{grid} grid does not fit a {size}-pixel image")
    rng = RngStream(seed, "classify").child(split)
    labels = rng.generator(0).integers(0, grid * grid, n)
    cell = size // grid
    patch = max(2, cell // 4)
    stripes = (np.arange(patch) // 2 % 2).astype(np.float64)
    x = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        gi = rng.generator(1, i)
        src = int(gi.integers(0, 2**31))
        big = 4 * size
        t, l = (int(v) for v in gi.integers(0, big - size + 1, 2))
        x[i] = noise_image(src, 0, big, (t, l, size, size))
        q = int(labels[i])
        r0 = (q // grid) * cell + int(gi.integers(0, cell - patch + 1))
        c0 = (q % grid) * cell + int(gi.integers(0, cell - patch + 1))
        tex = stripes[None, :] if gi.random() < 0.5 else stripes[:, None]
        x[i, :, r0 : r0 + patch, c0 : c0 + patch] = np.broadcast_to(tex, (patch, patch))
    return x, labels
