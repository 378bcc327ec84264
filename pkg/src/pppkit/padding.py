"""Padding schemes and pad-amount arithmetic.

Every scheme leaves the input block untouched and only decides the values in
the border ring. ``none`` is the valid-convolution convention: it accepts only
all-zero amounts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .tensor import maxpool2d, maxpool2d_backward

SCHEMES = ("zeros", "circular", "reflect", "replicate", "randn", "none")
PAD_MODES = ("valid", "same", "full")


class PaddingError(ValueError):
    pass


@dataclass(frozen=True)
class PadAmounts:
    left: int = 0
    right: int = 0
    top: int = 0
    bottom: int = 0

    def __post_init__(self):
        for name in ("left", "right", "top", "bottom"):
            if getattr(self, name) < 0:
                raise PaddingError(f"pad amount {name}={getattr(self, name)} is negative")

    @classmethod
    def from_axes(cls, rows: tuple[int, int], cols: tuple[int, int]) -> "PadAmounts":
        return cls(left=cols[0], right=cols[1], top=rows[0], bottom=rows[1])

    @property
    def is_zero(self) -> bool:
        return self.left == self.right == self.top == self.bottom == 0


@dataclass(frozen=True)
class PaddingScheme:
    kind: str
    window: int = 3

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise PaddingError(f"unknown padding scheme {self.kind!r}; expected one of {SCHEMES}")
        if self.kind == "randn" and (self.window < 3 or self.window % 2 == 0):
            raise PaddingError(f"randn window must be odd and >= 3, got {self.window}")

    @classmethod
    def parse(cls, text: str) -> "PaddingScheme":
        """``"zeros"``, ``"randn"`` or ``"randn:5"`` style names."""
        kind, _, window = text.strip().lower().partition(":")
        if window:
            return cls(kind, int(window))
        return cls(kind)

    @property
    def is_valid(self) -> bool:
        return self.kind == "none"

    def __str__(self) -> str:
        if self.kind == "randn" and self.window != 3:
            return f"randn:{self.window}"
        return self.kind


def pad_amounts_for(mode: str, kernel: int, stride: int, in_extent: int) -> tuple[int, int]:
    """Low/high pad for one axis.

    ``same`` puts the odd pixel on the high side, so a stride-2 window on an
    even extent pads only the right/bottom edge.
    """
    if kernel < 1 or stride < 1:
        raise PaddingError(f"kernel and stride must be >= 1, got k={kernel} s={stride}")
    if mode == "valid":
        return 0, 0
    if mode == "full":
        return kernel - 1, kernel - 1
    if mode == "same":
        out = math.ceil(in_extent / stride)
        total = max(0, (out - 1) * stride + kernel - in_extent)
        return total // 2, total - total // 2
    raise PaddingError(f"unknown pad mode {mode!r}; expected one of {PAD_MODES}")


# --------------------------------------------------------------- index maps


def _axis_index(n: int, lo: int, hi: int, kind: str) -> np.ndarray:
    """Source index for each padded position along one axis (-1 means zero)."""
    t = np.arange(-lo, n + hi)
    if kind == "zeros":
        return np.where((t >= 0) & (t < n), t, -1)
    if kind == "circular":
        if lo > n or hi > n:
            raise PaddingError(f"circular pad ({lo}, {hi}) exceeds extent {n}")
        return np.mod(t, n)
    if kind == "reflect":
        if lo >= n or hi >= n:
            raise PaddingError(f"reflect pad ({lo}, {hi}) must be smaller than extent {n}")
        t = np.abs(t)
        return np.where(t > n - 1, 2 * (n - 1) - t, t)
    if kind == "replicate":
        return np.clip(t, 0, n - 1)
    raise PaddingError(f"no index map for scheme {kind!r}")


def _one_hot(index: np.ndarray, n: int) -> np.ndarray:
    m = np.zeros((index.size, n), dtype=np.float64)
    ok = index >= 0
    m[np.nonzero(ok)[0], index[ok]] = 1.0
    return m


def _fold_index(dy: np.ndarray, rows: np.ndarray, cols: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adjoint of gathering with arbitrary per-axis index maps."""
    return np.matmul(_one_hot(rows, h).T, dy.astype(np.float64) @ _one_hot(cols, w))


def _fold_axis(dy: np.ndarray, index: np.ndarray, lo: int, n: int, axis: int) -> np.ndarray:
    """Adjoint of ``take(index, axis)``; the interior of every index map is the identity."""
    d = np.moveaxis(dy, axis, 0)
    out = d[lo : lo + n].astype(np.float64)
    for j in (*range(lo), *range(lo + n, d.shape[0])):
        if index[j] >= 0:
            out[index[j]] += d[j]
    return np.moveaxis(out, 0, axis)


def _fold(dy: np.ndarray, ctx: "PadContext", h: int, w: int) -> np.ndarray:
    a = ctx.amounts
    g = _fold_axis(dy, ctx.rows, a.top, h, 2)
    return _fold_axis(g, ctx.cols, a.left, w, 3)


@dataclass
class PadContext:
    """What :func:`pad_backward` needs to route gradients."""

    x_shape: tuple
    amounts: PadAmounts
    kind: str
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    # randn only
    z: np.ndarray | None = None
    border: np.ndarray | None = None
    win_rows: np.ndarray | None = None
    win_cols: np.ndarray | None = None
    argmax: np.ndarray | None = None
    argmin: np.ndarray | None = None
    window: int = 3


def _check_amounts(x: np.ndarray, a: PadAmounts, scheme: PaddingScheme) -> None:
    if scheme.kind == "none" and not a.is_zero:
        raise PaddingError(f"scheme 'none' cannot pad {a}")


def pad_forward(
    x: np.ndarray,
    amounts: PadAmounts,
    scheme: PaddingScheme,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    layer: int = 0,
) -> tuple[np.ndarray, PadContext]:
    _check_amounts(x, amounts, scheme)
    n, c, h, w = x.shape
    a = amounts
    ctx = PadContext(x.shape, a, scheme.kind)
    if a.is_zero:
        return x, ctx
    if scheme.kind == "randn":
        return _randn_forward(x, a, scheme.window, rng, sample_ids, layer)
    rows = _axis_index(h, a.top, a.bottom, scheme.kind)
    cols = _axis_index(w, a.left, a.right, scheme.kind)
    ctx.rows, ctx.cols = rows, cols
    if scheme.kind == "zeros":
        y = np.pad(x, ((0, 0), (0, 0), (a.top, a.bottom), (a.left, a.right)))
    else:
        y = np.ascontiguousarray(x[:, :, rows][:, :, :, cols])
    return y, ctx


def pad(
    x: np.ndarray,
    amounts: PadAmounts,
    scheme: PaddingScheme,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    layer: int = 0,
) -> np.ndarray:
    """Pad the spatial axes of an NCHW array with ``scheme``.

    ``rng``, ``sample_ids`` and ``layer`` tag the randn draws; other schemes
    ignore them.
    """
    return pad_forward(x, amounts, scheme, rng, sample_ids=sample_ids, layer=layer)[0]


def pad_backward(dy: np.ndarray, ctx: PadContext) -> np.ndarray:
    n, c, h, w = ctx.x_shape
    a = ctx.amounts
    if a.is_zero:
        return dy
    if ctx.kind == "zeros":
        return np.ascontiguousarray(dy[:, :, a.top : a.top + h, a.left : a.left + w])
    if ctx.kind == "randn":
        return _randn_backward(dy, ctx)
    return np.ascontiguousarray(_fold(dy, ctx, h, w), dtype=dy.dtype)


# ---------------------------------------------------------------------- randn


def randn_fill(
    x: np.ndarray,
    amounts: PadAmounts,
    window: int = 3,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    layer: int = 0,
) -> np.ndarray:
    """Fill the border with draws from N(mu_p, sigma_p^2) of the nearest window.

    ``mu_p = (max + min) / 2`` and ``sigma_p = max - mu_p`` over the
    ``window x window`` neighbourhood centred at the border location clamped
    into the region where a full window fits.
    """
    if window < 3 or window % 2 == 0:
        raise PaddingError(f"randn window must be odd and >= 3, got {window}")
    return _randn_forward(x, amounts, window, rng, sample_ids, layer)[0]


def _randn_forward(x, a: PadAmounts, window, rng, sample_ids, layer):
    n, c, h, w = x.shape
    if window > min(h, w):
        raise PaddingError(f"randn window {window} exceeds input extent {h}x{w}")
    if rng is None:
        raise PaddingError("randn padding needs an RngStream")
    sample_ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    half = window // 2
    hp, wp = h + a.top + a.bottom, w + a.left + a.right

    maxmap, argmax = maxpool2d(x, window, 1)
    negmin, argmin = maxpool2d(-x, window, 1)
    win_rows = np.clip(np.arange(hp) - a.top, half, h - 1 - half) - half
    win_cols = np.clip(np.arange(wp) - a.left, half, w - 1 - half) - half
    hi = maxmap.astype(np.float64)[:, :, win_rows][:, :, :, win_cols]
    lo = -negmin.astype(np.float64)[:, :, win_rows][:, :, :, win_cols]
    mu = (hi + lo) / 2
    sigma = hi - mu

    z = np.stack([rng.normal(int(s), layer, size=(c, hp, wp)) for s in sample_ids])
    y = (mu + sigma * z).astype(x.dtype)
    y[:, :, a.top : a.top + h, a.left : a.left + w] = x
    border = np.ones((hp, wp), dtype=bool)
    border[a.top : a.top + h, a.left : a.left + w] = False

    ctx = PadContext(
        x.shape, a, "randn", z=z, border=border, win_rows=win_rows, win_cols=win_cols,
        argmax=argmax, argmin=argmin, window=window,
    )
    return y, ctx


def _randn_backward(dy: np.ndarray, ctx: PadContext) -> np.ndarray:
    # value = (M + m)/2 + (M - m)/2 * z, with M/m the window max/min.
    n, c, h, w = ctx.x_shape
    a = ctx.amounts
    k = ctx.window
    g = np.where(ctx.border, dy.astype(np.float64), 0.0)
    d_hi = g * (1 + ctx.z) / 2
    d_lo = g * (1 - ctx.z) / 2
    mh, mw = h - k + 1, w - k + 1
    d_maxmap = _fold_index(d_hi, ctx.win_rows, ctx.win_cols, mh, mw)
    d_negmin = -_fold_index(d_lo, ctx.win_rows, ctx.win_cols, mh, mw)
    dx = dy.astype(np.float64)[:, :, a.top : a.top + h, a.left : a.left + w].copy()
    dx += maxpool2d_backward(d_maxmap, ctx.argmax, ctx.x_shape, k, 1)
    dx -= maxpool2d_backward(d_negmin, ctx.argmin, ctx.x_shape, k, 1)
    return dx.astype(dy.dtype)
