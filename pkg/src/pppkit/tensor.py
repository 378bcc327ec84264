"""Dense NCHW primitives and their gradients.

Arrays are plain numpy arrays. Storage is float32 by default; every op keeps
its input dtype, so the same code runs in float64 for gradient checks.
Reductions (convolution sums, means, variances, losses) accumulate in float64.
Convolution and pooling are VALID only: padding is always a separate op.
"""

from __future__ import annotations

import numpy as np

from .parallel import map_chunks

# Samples per work chunk. Fixed so results never depend on the worker count.
CHUNK = 16

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class NonFiniteError(FloatingPointError):
    """An op produced or received NaN/Inf."""


class ShapeError(ValueError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _out_extent(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


def _taps(x: np.ndarray, kh: int, kw: int, sy: int, sx: int, ho: int, wo: int) -> np.ndarray:
    """(N, C, kh*kw, Ho, Wo) stack of the shifted input slices, one per kernel tap."""
    return np.stack(
        [x[:, :, ky : ky + sy * (ho - 1) + 1 : sy, kx : kx + sx * (wo - 1) + 1 : sx] for ky in range(kh) for kx in range(kw)],
        axis=2,
    )


def _cols(x: np.ndarray, kh: int, kw: int, sy: int, sx: int, ho: int, wo: int) -> np.ndarray:
    n, c = x.shape[:2]
    cols = _taps(x.astype(np.float64, copy=False), kh, kw, sy, sx, ho, wo).reshape(n, c * kh * kw, ho * wo)
    if ho * wo == 1:
        # Keep BLAS on its matrix-matrix path; matrix-vector sums round differently.
        cols = np.concatenate([cols, cols], axis=2)
    return cols


# ---------------------------------------------------------------- convolution


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride=1) -> np.ndarray:
    """Direct VALID cross-correlation; ``w`` has shape (Co, Ci, kh, kw)."""
    sy, sx = _pair(stride)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4D input and kernel, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"kernel expects {ci} input channels, input has {c}")
    if h < kh or wd < kw:
        raise ShapeError(f"input {h}x{wd} smaller than kernel {kh}x{kw}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"bias shape {b.shape} != ({co},)")
    check_finite(x, "conv2d input")
    ho, wo = _out_extent(h, kh, sy), _out_extent(wd, kw, sx)
    wmat = w.reshape(co, -1).astype(np.float64)

    def run(a: int, z: int) -> np.ndarray:
        out = np.matmul(wmat, _cols(x[a:z], kh, kw, sy, sx, ho, wo))[:, :, : ho * wo]
        if b is not None:
            out += b.astype(np.float64)[:, None]
        return out.astype(x.dtype).reshape(z - a, co, ho, wo)

    y = np.concatenate(map_chunks(run, n, CHUNK), axis=0)
    return check_finite(y, "conv2d output")


def conv2d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray, stride=1, need_dx: bool = True):
    """Gradients (dx, dw, db) of :func:`conv2d`; dx is None when not ``need_dx``."""
    sy, sx = _pair(stride)
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ho, wo = dy.shape[2], dy.shape[3]
    wmat_t = w.reshape(co, -1).astype(np.float64).T

    def run(a: int, z: int):
        m = z - a
        d = dy[a:z].reshape(m, co, ho * wo).astype(np.float64)
        cols = _cols(x[a:z], kh, kw, sy, sx, ho, wo)[:, :, : ho * wo]
        dw_part = np.matmul(d, cols.transpose(0, 2, 1)).sum(axis=0)
        db_part = d.sum(axis=(0, 2))
        if not need_dx:
            return None, dw_part, db_part
        dcols = np.matmul(wmat_t, d).reshape(m, ci, kh * kw, ho, wo)
        dx_part = np.zeros((m, ci, h, wd), dtype=np.float64)
        for t in range(kh * kw):
            ky, kx = divmod(t, kw)
            dx_part[:, :, ky : ky + sy * (ho - 1) + 1 : sy, kx : kx + sx * (wo - 1) + 1 : sx] += dcols[:, :, t]
        return dx_part, dw_part, db_part

    parts = map_chunks(run, n, CHUNK)
    dx = np.concatenate([p[0] for p in parts], axis=0).astype(x.dtype) if need_dx else None
    dw = np.zeros((co, ci * kh * kw), dtype=np.float64)
    db = np.zeros(co, dtype=np.float64)
    for _, dw_part, db_part in parts:
        dw += dw_part
        db += db_part
    return dx, dw.reshape(w.shape).astype(w.dtype), db.astype(w.dtype)


# -------------------------------------------------------------------- pooling


def maxpool2d(x: np.ndarray, k: int, stride: int):
    """VALID max pooling. Returns ``(y, argmax)``; argmax indexes the k*k window taps."""
    n, c, h, wd = x.shape
    if h < k or wd < k:
        raise ShapeError(f"pool window {k} larger than input {h}x{wd}")
    check_finite(x, "maxpool2d input")
    ho, wo = _out_extent(h, k, stride), _out_extent(wd, k, stride)
    taps = _taps(x, k, k, stride, stride, ho, wo)
    idx = taps.argmax(axis=2)
    y = np.take_along_axis(taps, idx[:, :, None], axis=2)[:, :, 0]
    return y, idx


def maxpool2d_backward(dy: np.ndarray, argmax: np.ndarray, x_shape, k: int, stride: int) -> np.ndarray:
    ho, wo = dy.shape[2], dy.shape[3]
    dx = np.zeros(x_shape, dtype=np.float64)
    for t in range(k * k):
        ky, kx = divmod(t, k)
        dx[:, :, ky : ky + stride * (ho - 1) + 1 : stride, kx : kx + stride * (wo - 1) + 1 : stride] += np.where(
            argmax == t, dy, 0.0
        )
    return dx.astype(dy.dtype)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float64).mean(axis=(2, 3)).astype(x.dtype)


def global_avg_pool_backward(dy: np.ndarray, x_shape) -> np.ndarray:
    n, c, h, w = x_shape
    g = dy.astype(np.float64)[:, :, None, None] / (h * w)
    return np.broadcast_to(g, x_shape).astype(dy.dtype)


# ------------------------------------------------------------- dense & misc


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """``x @ w.T + b`` with ``w`` of shape (out, in)."""
    if x.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    check_finite(x, "linear input")
    y = x.astype(np.float64) @ w.astype(np.float64).T
    if b is not None:
        y += b
    return check_finite(y.astype(x.dtype), "linear output")


def linear_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    d = dy.astype(np.float64)
    dx = d @ w.astype(np.float64)
    dw = d.T @ x.astype(np.float64)
    return dx.astype(x.dtype), dw.astype(w.dtype), d.sum(axis=0).astype(w.dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def batchnorm_train(x, gamma, beta):
    """Per-batch statistics; returns ``(y, cache, batch_mean, batch_var)``."""
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=(0, 2, 3))
    var = x64.var(axis=(0, 2, 3))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x64 - mean[None, :, None, None]) * inv[None, :, None, None]
    y = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return y.astype(x.dtype), (xhat, inv), mean, var


def batchnorm_eval(x, gamma, beta, running_mean, running_var):
    inv = 1.0 / np.sqrt(running_var.astype(np.float64) + BN_EPS)
    scale = gamma * inv
    shift = beta - running_mean * scale
    y = x.astype(np.float64) * scale[None, :, None, None] + shift[None, :, None, None]
    return y.astype(x.dtype)


def batchnorm_backward(dy, cache, gamma):
    xhat, inv = cache
    d = dy.astype(np.float64)
    m = d.shape[0] * d.shape[2] * d.shape[3]
    dbeta = d.sum(axis=(0, 2, 3))
    dgamma = (d * xhat).sum(axis=(0, 2, 3))
    dxhat = d * gamma[None, :, None, None]
    dx = (
        inv[None, :, None, None]
        / m
        * (m * dxhat - dxhat.sum(axis=(0, 2, 3))[None, :, None, None] - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    )
    return dx.astype(dy.dtype), dgamma.astype(gamma.dtype), dbeta.astype(gamma.dtype)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss")
    return float(loss), grad.astype(logits.dtype)
