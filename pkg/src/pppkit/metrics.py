"""PPP maps and their summaries.

For a layer, the map is the per-element mean over samples of
``|optimal - algorithmic|``, kept as (c, h, w) in float64. Two summaries:

* SNR: the spatial mean of the channel-summed map divided by the mean
  spatial standard deviation of the algorithmic features (population std per
  sample and channel, then averaged over both).
* MAE: the mean of all map entries.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignmentPlan, crop_optimal
from .imageio import write_pnm
from .netspec import ArchSpec
from .network import ParamSet, forward_capture
from .padding import PaddingScheme
from .rng import RngStream
from .tensor import CHUNK

log = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12
CSV_HEADER = ("arch", "scheme", "checkpoint", "layer", "n", "snr_ppp", "mae_ppp")
NONE = PaddingScheme("none")


@dataclass
class PPPMap:
    layer: int
    data: np.ndarray  # (c, h, w) float64
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a PPP map needs at least one sample")
        if self.data.ndim != 3:
            raise ValueError(f"PPP map must be (c, h, w), got {self.data.shape}")
        if np.any(self.data < 0):
            raise ValueError("PPP map entries must be non-negative")


@dataclass
class FeatureStats:
    """Running sum of per-sample mean spatial std of algorithmic features."""

    total: float = 0.0
    n: int = 0

    def add(self, features: np.ndarray) -> None:
        f = features.astype(np.float64)
        per_sample = f.std(axis=(2, 3)).mean(axis=1)
        for v in per_sample:
            self.total += float(v)
        self.n += f.shape[0]

    @property
    def mean_std(self) -> float:
        if self.n == 0:
            raise ValueError("no samples accumulated")
        return self.total / self.n

    @property
    def degenerate(self) -> bool:
        return self.mean_std < DEGENERATE_STD


class _MapSum:
    def __init__(self, layer: int):
        self.layer = layer
        self.total: np.ndarray | None = None
        self.n = 0

    def add(self, diff: np.ndarray) -> None:
        part = diff.sum(axis=0)
        self.total = part if self.total is None else self.total + part
        self.n += diff.shape[0]

    def result(self) -> PPPMap:
        if self.total is None:
            raise ValueError("empty dataset")
        return PPPMap(self.layer, self.total / self.n, self.n)


def snr_ppp(m: PPPMap, stats: FeatureStats) -> float:
    """Signal-to-noise ratio; ``inf`` (with a warning) for constant features."""
    num = float(m.data.sum(axis=0).mean())
    if num == 0.0:
        return 0.0
    den = stats.mean_std
    if den < DEGENERATE_STD:
        log.warning("layer %d: algorithmic features are constant; SNR reported as inf", m.layer)
        return math.inf
    return num / den


def mae_ppp(m: PPPMap) -> float:
    return float(m.data.mean())


def measure_maps(
    arch: ArchSpec,
    params: ParamSet,
    images,
    scheme: PaddingScheme,
    plan: AlignmentPlan,
    rng: RngStream | None = None,
    *,
    batch_size: int = CHUNK,
) -> list[tuple[PPPMap, FeatureStats]]:
    """PPP maps and feature stats for every plan layer.

    ``images`` is any sliceable of oversized (N, C, H, W) float canvases; the
    padded path sees ``plan.nominal_view`` of each one. Samples are taken in
    index order and their index tags the randn draws.
    """
    if scheme.is_valid != plan.scheme_is_valid:
        raise ValueError(
            f"plan was built for {'valid' if plan.scheme_is_valid else 'padded'} features, scheme is {scheme}"
        )
    if plan.arch != arch.name:
        raise ValueError(f"plan is for {plan.arch}, arch is {arch.name}")
    n = len(images)
    if n == 0:
        raise ValueError("empty dataset")
    layers = plan.capture_layers
    sums = [_MapSum(li) for li in layers]
    stats = [FeatureStats() for _ in layers]
    for a in range(0, n, batch_size):
        batch = np.asarray(images[a : a + batch_size])
        ids = np.arange(a, a + batch.shape[0])
        algo = forward_capture(arch, params, plan.nominal_view(batch), scheme, rng, sample_ids=ids, layers=layers)
        valid = forward_capture(arch, params, batch, NONE, None, sample_ids=ids, layers=layers)
        opt = crop_optimal(valid, plan)
        for s, st, (li, f), o in zip(sums, stats, algo, opt):
            diff = np.abs(o.astype(np.float64) - f.astype(np.float64))
            s.add(diff)
            st.add(f)
    return [(s.result(), st) for s, st in zip(sums, stats)]


def ppp_map(arch, params, images, scheme, plan, k: int, rng=None) -> PPPMap:
    """PPP map at capture layer ``k`` only."""
    sub = AlignmentPlan(
        plan.arch, plan.nominal, plan.oversize, plan.margins, (plan.layer(k),),
        plan.total_shift_exact, plan.scheme_is_valid, plan.corrected,
    )
    return measure_maps(arch, params, images, scheme, sub, rng)[0][0]


# -------------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    arch: str
    scheme: str
    checkpoint: str
    layer: int
    n: int
    snr_ppp: float
    mae_ppp: float
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        return [self.arch, self.scheme, self.checkpoint, str(self.layer), str(self.n),
                fmt_float(self.snr_ppp), fmt_float(self.mae_ppp)]


def fmt_float(v: float) -> str:
    return format(float(v), ".9g")


def reports_from(maps, arch: str, scheme: str, checkpoint: str) -> list[MetricsReport]:
    out = []
    for m, st in maps:
        out.append(MetricsReport(arch, scheme, checkpoint, m.layer, m.n, snr_ppp(m, st), mae_ppp(m), st.degenerate))
    return out


def reports_csv(reports, leading: tuple[str, ...] = ()) -> str:
    """CSV text with header; ``leading`` names extra columns taken from ``report.extra``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(leading) + list(CSV_HEADER))
    for r in reports:
        w.writerow([str(r.extra[k]) for k in leading] + r.row())
    return buf.getvalue()


def write_reports_csv(path: str | os.PathLike, reports, leading: tuple[str, ...] = ()) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(reports_csv(reports, leading))


# ------------------------------------------------------------------- heatmaps


def heatmap(m: PPPMap | np.ndarray) -> np.ndarray:
    """Channel mean, min-max normalised, quantised to uint8 (constant -> 128)."""
    data = m.data if isinstance(m, PPPMap) else np.asarray(m, dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=0)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        v = (data - lo) / (hi - lo)
    else:
        v = np.full(data.shape, 0.5)
    return np.round(v * 255).astype(np.uint8)


def render_heatmap(m: PPPMap | np.ndarray, path: str | os.PathLike | None = None) -> np.ndarray:
    img = heatmap(m)
    if path is not None:
        write_pnm(path, img)
    return img
