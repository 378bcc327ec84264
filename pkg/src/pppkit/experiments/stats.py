"""Rank statistics."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def average_ranks_x2(x) -> np.ndarray:
    """Twice the 1-based average ranks (always integers), ties share their mean rank."""
    x = np.asarray(x).ravel()
    n = x.size
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], n]  # exclusive
    ranks = np.empty(n, dtype=np.int64)
    # first rank (starts+1) plus last rank (ends) of each tie group
    ranks[order] = np.repeat(starts + 1 + ends, ends - starts)
    return ranks


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties.

    Centred ranks are kept as exact integers, so without ties the result is
    the correctly rounded value of ``1 - 6 * sum(d^2) / (n (n^2 - 1))``.
    Constant input gives ``nan``.
    """
    rx, ry = average_ranks_x2(x), average_ranks_x2(y)
    n = rx.size
    if n != ry.size:
        raise ValueError(f"length mismatch: {n} vs {ry.size}")
    if n < 2:
        raise ValueError("spearman needs at least two points")
    # 2*rank - (n + 1) is twice the centred rank: an integer
    a = [int(v) - (n + 1) for v in rx]
    b = [int(v) - (n + 1) for v in ry]
    cov = sum(p * q for p, q in zip(a, b))
    vx = sum(p * p for p in a)
    vy = sum(q * q for q in b)
    if vx == 0 or vy == 0:
        return math.nan
    if vx == vy:
        return float(Fraction(cov, vx))
    return cov / math.sqrt(vx * vy)


def rank_difference_formula(x, y) -> Fraction:
    """``1 - 6 sum(d^2) / (n (n^2 - 1))``; valid only without ties."""
    rx = average_ranks_x2(x) // 2
    ry = average_ranks_x2(y) // 2
    n = len(rx)
    d2 = sum((int(p) - int(q)) ** 2 for p, q in zip(rx, ry))
    return 1 - Fraction(6 * d2, n * (n * n - 1))
