"""Position-reconstruction baseline.

A single 3x3 valid convolution (no padding, so it adds no position cue of
its own) is trained on frozen features to reproduce a fixed centred
Gaussian. Scores per trial: mean Spearman correlation and mean absolute error
between prediction and target on held-out samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..rng import RngStream
from ..tensor import NonFiniteError, conv2d, conv2d_backward
from .stats import spearman

HEAD_K = 3


def gaussian_target(h: int, w: int, sigma_frac: float = 0.25) -> np.ndarray:
    """Peak-1 Gaussian centred on the map, sigma = ``sigma_frac`` * side."""
    r = np.arange(h) - (h - 1) / 2
    c = np.arange(w) - (w - 1) / 2
    sr, sc = sigma_frac * h, sigma_frac * w
    return np.exp(-(r[:, None] ** 2) / (2 * sr**2) - (c[None, :] ** 2) / (2 * sc**2))


@dataclass
class PosENetTrial:
    seed: int
    spc: float
    mae: float
    diverged: bool = False
    losses: list = field(default_factory=list)


@dataclass
class PosENetRun:
    layer: int
    target: np.ndarray
    trials: list

    def summary(self) -> dict:
        ok = [t for t in self.trials if not t.diverged]
        spc = np.array([t.spc for t in ok])
        mae = np.array([t.mae for t in ok])
        return {
            "layer": self.layer,
            "trials": len(self.trials),
            "diverged": len(self.trials) - len(ok),
            "spc_mean": float(spc.mean()) if ok else math.nan,
            "spc_std": float(spc.std(ddof=1)) if len(ok) > 1 else 0.0,
            "mae_mean": float(mae.mean()) if ok else math.nan,
            "mae_std": float(mae.std(ddof=1)) if len(ok) > 1 else 0.0,
        }


def score(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """Mean per-sample Spearman and MAE of (n, h, w) predictions."""
    spc = [spearman(p.ravel(), target.ravel()) for p in pred]
    spc = [0.0 if math.isnan(s) else s for s in spc]
    return float(np.mean(spc)), float(np.abs(pred - target[None]).mean())


def _init_head(c: int, g: np.random.Generator):
    fan_in = c * HEAD_K * HEAD_K
    bound = math.sqrt(6.0 / fan_in)
    w = g.uniform(-bound, bound, (1, c, HEAD_K, HEAD_K)).astype(np.float32)
    return w, np.zeros(1, dtype=np.float32)


def run_posenet(
    train_features: np.ndarray,
    test_features: np.ndarray,
    trials: int = 5,
    epochs: int = 100,
    lr: float = 0.05,
    momentum: float = 0.9,
    batch_size: int = 16,
    seed: int = 0,
    layer: int = -1,
) -> PosENetRun:
    """Train one head per trial on (n, c, h, w) features; trials differ only in init."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if train_features.ndim != 4 or test_features.shape[1:] != train_features.shape[1:]:
        raise ValueError("train and test features must share (c, h, w)")
    n, c, h, w = train_features.shape
    if h < HEAD_K or w < HEAD_K:
        raise ValueError(f"features {h}x{w} are smaller than the {HEAD_K}x{HEAD_K} head")
    target = gaussian_target(h - HEAD_K + 1, w - HEAD_K + 1)
    # Rescale so a head input vector has unit mean square whatever the
    # layer's width and range; one learning rate then fits every layer.
    rms = float(np.sqrt((train_features.astype(np.float64) ** 2).mean()))
    scale = (rms or 1.0) * math.sqrt(c * HEAD_K * HEAD_K)
    ftr = (train_features / scale).astype(np.float32)
    fte = (test_features / scale).astype(np.float32)
    root = RngStream(seed, "posenet")
    out = []
    for t in range(trials):
        rng = root.child(f"trial{t}")
        wgt, b = _init_head(c, rng.generator(0))
        vw = np.zeros(wgt.shape)
        vb = np.zeros(b.shape)
        losses = []
        diverged = False
        for epoch in range(epochs):
            order = rng.generator(1, epoch).permutation(n)
            total = 0.0
            for a in range(0, n, batch_size):
                xb = ftr[order[a : a + batch_size]]
                try:
                    pred = conv2d(xb, wgt, b)[:, 0].astype(np.float64)
                except NonFiniteError:
                    diverged = True
                    break
                err = pred - target[None]
                loss = float((err**2).mean())
                if not math.isfinite(loss):
                    diverged = True
                    break
                total += loss * xb.shape[0]
                dy = (2.0 * err / err.size)[:, None].astype(np.float32)
                _, dw, db = conv2d_backward(dy, xb, wgt, need_dx=False)
                vw = momentum * vw + dw
                vb = momentum * vb + db
                wgt = (wgt - lr * vw).astype(np.float32)
                b = (b - lr * vb).astype(np.float32)
            if diverged:
                break
            losses.append(total / n)
        if diverged:
            out.append(PosENetTrial(t, math.nan, math.nan, True, losses))
            continue
        pred = conv2d(fte, wgt, b)[:, 0].astype(np.float64)
        spc, mae = score(pred, target)
        out.append(PosENetTrial(t, spc, mae, False, losses))
    return PosENetRun(layer, target, out)
