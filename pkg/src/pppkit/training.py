"""Minibatch SGD over in-memory data."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .netspec import ArchSpec
from .network import SGD, ParamSet, forward_backward, init_params, predict
from .padding import PaddingScheme
from .rng import RngStream
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValueError(f"invalid training config {self}")


def train(
    arch: ArchSpec,
    x: np.ndarray,
    y: np.ndarray,
    scheme: PaddingScheme,
    cfg: TrainConfig,
    rng: RngStream,
    params: ParamSet | None = None,
    on_epoch: Callable[[int, ParamSet, list[float]], None] | None = None,
) -> tuple[ParamSet, list[float]]:
    """Train from ``params`` (or a fresh init) and return the per-epoch mean losses.

    ``on_epoch(epoch, params, losses)`` runs before the first epoch (epoch 0)
    and after every epoch.
    """
    params = init_params(arch, rng) if params is None else params
    opt = SGD(cfg.lr, cfg.momentum)
    shuffle = rng.child("shuffle")
    pad_rng = rng.child("train-pad")
    n = x.shape[0]
    losses: list[float] = []
    if on_epoch is not None:
        on_epoch(0, params, losses)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.generator(epoch).permutation(n)
        total = 0.0
        for a in range(0, n, cfg.batch_size):
            idx = order[a : a + cfg.batch_size]
            try:
                loss, grads = forward_backward(
                    arch, params, x[idx], y[idx], scheme, pad_rng.child(f"e{epoch}"), sample_ids=idx
                )
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}") from None
            if not np.isfinite(loss):
                raise DivergenceError(f"epoch {epoch}: loss is {loss}")
            if cfg.weight_decay:
                for key, gd in grads.items():
                    if "weight" in gd:
                        gd["weight"] = gd["weight"] + cfg.weight_decay * params[key]["weight"]
            opt.step(params, grads)
            bad = [f"{k}.{n}" for k, d in params.items() for n, a in d.items() if not np.isfinite(a).all()]
            if bad:
                raise DivergenceError(f"epoch {epoch}: non-finite values in {', '.join(bad)}")
            total += loss * len(idx)
        losses.append(total / n)
        log.debug("epoch %d loss %.4f", epoch, losses[-1])
        if on_epoch is not None:
            on_epoch(epoch, params, losses)
    return params, losses


def accuracy(arch, params, x, y, scheme, rng=None) -> float:
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    return float((predict(arch, params, x, scheme, rng) == np.asarray(y)).mean() * 100.0)
