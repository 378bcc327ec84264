"""PPP measured at regular checkpoints during training."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

from .. import checkpoint as ckpt
from ..alignment import AlignmentPlan
from ..metrics import measure_maps, reports_from, write_reports_csv
from ..netspec import ArchSpec
from ..network import copy_params
from ..padding import PaddingScheme
from ..rng import RngStream
from ..training import TrainConfig, train

log = logging.getLogger(__name__)

# Features are measured on a canvas much larger than the 48 px training size:
# the nets are fully convolutional up to the last capture layer, and a large
# view keeps the border band a small, fixed-width part of each map, so growth
# of the border response is not masked by the interior.
CHRONO_NOMINAL = (640, 640)
CHRONO_IMAGES = 6
CHRONO_TRAIN = TrainConfig(epochs=50, batch_size=32, lr=0.002, momentum=0.9)


class SnapshotError(RuntimeError):
    def __init__(self, message: str, reports: list):
        super().__init__(message)
        self.reports = reports


def run_chronological(
    arch: ArchSpec,
    scheme: PaddingScheme,
    x: np.ndarray,
    y: np.ndarray,
    images,
    plan: AlignmentPlan,
    train_cfg: TrainConfig,
    seed: int,
    snapshot_every: int = 10,
    out_dir: str | os.PathLike | None = None,
    meta: dict | None = None,
) -> list:
    """Train on (x, y); at epoch 0 and every ``snapshot_every`` epochs measure every plan layer.

    Each snapshot is checkpointed and the CSV (``chrono.csv``) is rewritten,
    so a failure leaves the rows measured so far on disk and on the raised
    :class:`SnapshotError`.
    """
    if snapshot_every < 1:
        raise ValueError("snapshot_every must be >= 1")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rng = RngStream(seed, "chrono")
    measure_rng = RngStream(seed, "chrono-measure")
    reports: list = []

    def snapshot(epoch, params, losses):
        if epoch % snapshot_every:
            return
        name = f"epoch{epoch:04d}"
        try:
            if out is not None:
                info = {"scheme": str(scheme), "seed": seed, **(meta or {})}
                ckpt.save(out / f"{name}.ckpt", ckpt.Checkpoint(arch.name, epoch, copy_params(params), info))
            maps = measure_maps(arch, params, images, scheme, plan, measure_rng)
            for r in reports_from(maps, arch.name, str(scheme), name):
                r.extra["epoch"] = epoch
                reports.append(r)
            if out is not None:
                write_reports_csv(out / "chrono.csv", reports, leading=("epoch",))
        except OSError as exc:
            raise SnapshotError(f"snapshot at epoch {epoch} failed: {exc}", list(reports)) from exc
        log.info("epoch %d: %s", epoch, ", ".join(f"L{r.layer}={r.snr_ppp:.3g}" for r in reports[-len(plan.layers):]))

    train(arch, x, y, scheme, train_cfg, rng, on_epoch=snapshot)
    return reports
