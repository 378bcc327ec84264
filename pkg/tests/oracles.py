"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def conv2d_loops(x, w, b=None, stride=1):
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    y = np.zeros((n, co, ho, wo), dtype=np.float64)
    for i, o, r, s in itertools.product(range(n), range(co), range(ho), range(wo)):
        patch = x[i, :, r * stride : r * stride + kh, s * stride : s * stride + kw].astype(np.float64)
        y[i, o, r, s] = float((patch * w[o]).sum()) + (0.0 if b is None else float(b[o]))
    return y


def maxpool_loops(x, k, stride):
    n, c, h, wd = x.shape
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    y = np.zeros((n, c, ho, wo), dtype=x.dtype)
    for i, ch, r, s in itertools.product(range(n), range(c), range(ho), range(wo)):
        y[i, ch, r, s] = x[i, ch, r * stride : r * stride + k, s * stride : s * stride + k].max()
    return y


def linear_loops(x, w, b):
    out = np.zeros((x.shape[0], w.shape[0]))
    for i in range(x.shape[0]):
        for o in range(w.shape[0]):
            out[i, o] = sum(float(x[i, j]) * float(w[o, j]) for j in range(x.shape[1])) + float(b[o])
    return out


def pad_loops(x, top, bottom, left, right, kind):
    """Per-pixel padding by explicit index rules."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + top + bottom, w + left + right), dtype=x.dtype)

    def src(t, size):
        if kind == "zeros":
            return t if 0 <= t < size else None
        if kind == "circular":
            return t % size
        if kind == "replicate":
            return min(max(t, 0), size - 1)
        if kind == "reflect":
            while t < 0 or t >= size:
                t = -t if t < 0 else 2 * (size - 1) - t
            return t
        raise ValueError(kind)

    for r in range(out.shape[2]):
        for s in range(out.shape[3]):
            a, b = src(r - top, h), src(s - left, w)
            if a is not None and b is not None:
                out[:, :, r, s] = x[:, :, a, b]
    return out


def dependency_box(fn, shape, out_index, eps=1.0):
    """Input rows/cols feeding one output element of ``fn``, found by perturbation.

    ``fn`` maps a float64 (1, c, h, w) array to a (1, c', h', w') array. The
    reference input is random, so a dependency is missed only if a perturbation
    is exactly cancelled.
    """
    rng = np.random.default_rng(0)
    base = rng.standard_normal(shape)
    y0 = fn(base)[out_index]
    rows, cols = set(), set()
    for r in range(shape[2]):
        for s in range(shape[3]):
            x = base.copy()
            x[:, :, r, s] += eps
            if fn(x)[out_index] != y0:
                rows.add(r)
                cols.add(s)
    return (min(rows), max(rows)) if rows else None, (min(cols), max(cols)) if cols else None


def left_of_by_centroid(img, red=(1.0, 0.0, 0.0), green=(0.0, 1.0, 0.0)):
    """Class 1 when the red square's centroid is left of the green one's."""
    r = np.all(np.isclose(img, np.array(red)[:, None, None]), axis=0)
    g = np.all(np.isclose(img, np.array(green)[:, None, None]), axis=0)
    rc = np.nonzero(r)[1].mean()
    gc = np.nonzero(g)[1].mean()
    return 1 if rc < gc else 0


def rank_difference_spearman(x, y):
    """1 - 6 sum d^2 / (n (n^2 - 1)) with ordinal ranks; valid only without ties."""
    n = len(x)
    rx = np.argsort(np.argsort(x))
    ry = np.argsort(np.argsort(y))
    d = (rx - ry).astype(np.int64)
    return 1 - 6 * int((d * d).sum()) / (n * (n * n - 1))


def pearson_of_average_ranks(x, y):
    """Pearson correlation of average ranks, by direct definition."""

    def avg_rank(v):
        v = list(v)
        order = sorted(range(len(v)), key=lambda i: v[i])
        ranks = [0.0] * len(v)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            for t in range(i, j + 1):
                ranks[order[t]] = (i + j) / 2 + 1
            i = j + 1
        return np.array(ranks)

    a, b = avg_rank(x), avg_rank(y)
    a, b = a - a.mean(), b - b.mean()
    return float((a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum()))
