"""Matching valid-path features on an oversized canvas to padded features.

The padded ("algorithmic") network sees the nominal image; the valid network
sees an oversized canvas that contains the nominal image at margin ``c0``.
Along one axis, if valid index ``i`` at layer ``l-1`` equals padded index
``j + c[l-1]``, a window of stride ``s`` and low pad ``p`` gives

    c[l] = (c[l-1] - p) / s

so the features line up exactly iff every ``c[l]`` is a non-negative integer
and the padded map fits inside the valid one. A stride-2 layer with odd
``c[l-1] - p`` is the classic one-pixel misalignment of max pooling on odd
margins. Everything here is per axis and exact (``Fraction``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .netspec import ArchSpec, AxisStep, compose_steps, receptive_field

PLAN_SCHEMA = "pppkit.plan/1"
# Margins tried per axis before giving up.
SEARCH_LIMIT = 4096


class MisalignedPlan(ValueError):
    """Crop offsets are fractional, negative or out of range at some layer."""

    def __init__(self, message: str, layer: int, axis: str):
        super().__init__(message)
        self.layer = layer
        self.axis = axis


def _round_half_up(q: Fraction) -> int:
    return math.floor(q + Fraction(1, 2))


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


@dataclass(frozen=True)
class AxisPlan:
    """One axis of a plan: margin and per-spatial-layer offsets."""

    nominal: int
    oversize: int
    margin: int
    offsets: tuple  # layer index -> crop offset into the valid feature
    algo_extent: tuple  # layer index -> padded-path extent
    valid_extent: tuple  # layer index -> valid-path extent
    layers: tuple  # spatial layer indices, same order as the tuples above

    def at(self, layer: int) -> tuple[int, int, int]:
        """(offset, algo extent, valid extent) after ``layer``; identity before any spatial layer."""
        idx = [k for k, li in enumerate(self.layers) if li <= layer]
        if not idx:
            return self.margin, self.nominal, self.oversize
        k = idx[-1]
        return self.offsets[k], self.algo_extent[k], self.valid_extent[k]


@dataclass(frozen=True)
class LayerAlignment:
    layer: int
    crop: tuple[int, int, int, int]  # top, left, height, width into the valid feature
    algo_shape: tuple[int, int, int]
    valid_shape: tuple[int, int, int]
    shift: tuple[Fraction, Fraction]  # principal-point shift in this layer's pixels
    shift_input: tuple[Fraction, Fraction]  # the same shift in input pixels
    interior_rows: tuple[int, int]  # half-open range of fully interior rows
    interior_cols: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "crop": list(self.crop),
            "algo_shape": list(self.algo_shape),
            "valid_shape": list(self.valid_shape),
            "shift": [_fmt(v) for v in self.shift],
            "shift_input": [_fmt(v) for v in self.shift_input],
            "interior_rows": list(self.interior_rows),
            "interior_cols": list(self.interior_cols),
        }


@dataclass(frozen=True)
class AlignmentPlan:
    arch: str
    nominal: tuple[int, int]
    oversize: tuple[int, int]
    margins: tuple[int, int]  # top, left of the nominal image inside the canvas
    layers: tuple  # LayerAlignment per capture layer
    total_shift_exact: tuple[Fraction, Fraction]
    scheme_is_valid: bool = False
    corrected: bool = True

    @property
    def total_shift(self) -> tuple[int, int]:
        """Input-resolution shift, half pixels rounded toward the high side."""
        return _round_half_up(self.total_shift_exact[0]), _round_half_up(self.total_shift_exact[1])

    @property
    def capture_layers(self) -> list[int]:
        return [la.layer for la in self.layers]

    def layer(self, index: int) -> LayerAlignment:
        for la in self.layers:
            if la.layer == index:
                return la
        raise KeyError(f"layer {index} is not in the plan")

    def nominal_view(self, images: np.ndarray) -> np.ndarray:
        """The nominal-size window of oversized NCHW images."""
        if images.shape[2:] != tuple(self.oversize):
            raise ValueError(f"plan expects {self.oversize} canvases, got {images.shape[2:]}")
        t, l = self.margins
        h, w = self.nominal
        return images[:, :, t : t + h, l : l + w]

    def to_dict(self) -> dict:
        return {
            "schema": PLAN_SCHEMA,
            "arch": self.arch,
            "nominal": list(self.nominal),
            "oversize": list(self.oversize),
            "margins": list(self.margins),
            "scheme_is_valid": self.scheme_is_valid,
            "corrected": self.corrected,
            "total_shift": list(self.total_shift),
            "total_shift_exact": [_fmt(v) for v in self.total_shift_exact],
            "layers": [la.to_dict() for la in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ------------------------------------------------------------------ per axis


def _offsets(steps: list[AxisStep], margin: int, axis: str) -> list[int]:
    """Exact crop offsets after each step; raises on the first bad layer."""
    c = Fraction(margin)
    out = []
    for st in steps:
        c = (c - st.pad_lo) / st.stride
        if c.denominator != 1:
            raise MisalignedPlan(
                f"layer {st.layer} ({axis}): crop offset {_fmt(c)} is not an integer "
                f"(margin {margin}, stride {st.stride}, low pad {st.pad_lo})",
                st.layer, axis,
            )
        if c < 0:
            raise MisalignedPlan(f"layer {st.layer} ({axis}): negative crop offset {c}", st.layer, axis)
        out.append(int(c))
    return out


def _axis_plan(arch: ArchSpec, nominal: int, margin: int, upto: int, valid: bool, axis: str,
               oversize: int | None = None) -> AxisPlan:
    oversize = nominal + 2 * margin if oversize is None else oversize
    algo = arch.axis_steps(nominal, upto, valid=valid)
    try:
        big = arch.axis_steps(oversize, upto, valid=True)
    except ValueError as exc:
        raise MisalignedPlan(f"{axis}: canvas {oversize} too small: {exc}", upto, axis) from None
    offs = _offsets(algo, margin, axis)
    for st, vb, c in zip(algo, big, offs):
        if c + st.out_extent > vb.out_extent:
            raise MisalignedPlan(
                f"layer {st.layer} ({axis}): crop [{c}, {c + st.out_extent}) exceeds valid extent {vb.out_extent}",
                st.layer, axis,
            )
    return AxisPlan(
        nominal, oversize, margin, tuple(offs),
        tuple(st.out_extent for st in algo), tuple(st.out_extent for st in big), tuple(st.layer for st in algo),
    )


def principal_shift(arch: ArchSpec, nominal: int, upto: int, valid: bool = False) -> Fraction:
    """Padded-path principal point minus the input centre, in input pixels."""
    steps = arch.axis_steps(nominal, upto, valid=valid)
    if not steps:
        return Fraction(0)
    centre = Fraction(steps[-1].out_extent - 1, 2)
    return compose_steps(steps)(centre) - Fraction(nominal - 1, 2)


def interior_range(steps: list[AxisStep], extent: int) -> tuple[int, int]:
    """Half-open index range whose whole dependency cone avoids padded values."""
    lo, hi = 0, extent - 1
    for st in steps:
        # j is interior if s*j - p >= lo and s*j - p + k - 1 <= hi
        lo = -((-(lo + st.pad_lo)) // st.stride)
        hi = (hi + st.pad_lo - st.k + 1) // st.stride
        hi = min(hi, st.out_extent - 1)
        lo = max(lo, 0)
        if hi < lo:
            return 0, 0
    return lo, hi + 1


def _radius(steps: list[AxisStep]) -> int:
    return receptive_field(steps) // 2


# ---------------------------------------------------------------------- plans


def _layer_alignments(arch, nominal, rows: AxisPlan, cols: AxisPlan, layers, valid, corrected):
    shapes = arch.shapes(nominal, valid=valid)
    out = []
    for li in layers:
        c = shapes[li][0]
        ro, ra, rv = rows.at(li)
        co, ca, cv = cols.at(li)
        if not corrected:
            ro, co = (rv - ra) // 2, (cv - ca) // 2
        rsteps = arch.axis_steps(nominal[0], li, valid=valid)
        csteps = arch.axis_steps(nominal[1], li, valid=valid)
        shift = (Fraction(ro) - Fraction(rv - ra, 2), Fraction(co) - Fraction(cv - ca, 2))
        out.append(
            LayerAlignment(
                layer=li,
                crop=(ro, co, ra, ca),
                algo_shape=(c, ra, ca),
                valid_shape=(c, rv, cv),
                shift=shift,
                shift_input=(
                    principal_shift(arch, nominal[0], li, valid),
                    principal_shift(arch, nominal[1], li, valid),
                ),
                interior_rows=interior_range(rsteps, nominal[0]),
                interior_cols=interior_range(csteps, nominal[1]),
            )
        )
    return tuple(out)


def _resolve(arch: ArchSpec, nominal, layers) -> tuple[tuple[int, int], list[int]]:
    nominal = tuple(arch.input_size[1:]) if nominal is None else (int(nominal[0]), int(nominal[1]))
    layers = arch.capture_layers if layers is None else sorted(set(int(i) for i in layers))
    for li in layers:
        if li > arch.last_spatial:
            raise ValueError(f"layer {li} is not spatial in {arch.name}")
    return nominal, layers


def compute_plan(
    arch: ArchSpec,
    nominal: tuple[int, int] | None = None,
    scheme_is_valid: bool = False,
    correct_shift: bool = True,
    layers: list[int] | None = None,
) -> AlignmentPlan:
    """Smallest centred oversize canvas for which every crop is exact.

    The lower bound is ``nominal + 2 * radius + |shift|`` (the largest
    receptive-field radius and principal-point shift over the planned layers);
    the margin then grows until every offset is integral and in range.
    ``correct_shift=False`` keeps the canvas but centres every crop naively,
    which is wrong whenever the padded path is skewed.
    """
    nominal, layers = _resolve(arch, nominal, layers)
    upto = max(layers)
    margins = []
    for axis, n in zip(("rows", "cols"), nominal):
        # kernel sizes and strides only; the padded path exists at any nominal size
        radius = _radius(arch.axis_steps(n, upto, valid=scheme_is_valid))
        shift = max((abs(principal_shift(arch, n, li, scheme_is_valid)) for li in layers), default=Fraction(0))
        lower = math.ceil((2 * radius + shift) / 2)
        for m in range(max(lower, 0), max(lower, 0) + SEARCH_LIMIT):
            try:
                _axis_plan(arch, n, m, upto, scheme_is_valid, axis)
            except MisalignedPlan:
                continue
            margins.append(m)
            break
        else:
            raise MisalignedPlan(f"{axis}: no aligned margin within {SEARCH_LIMIT} pixels", upto, axis)
    return plan_with_margins(arch, nominal, tuple(margins), scheme_is_valid, correct_shift, layers)


def plan_with_margins(
    arch: ArchSpec,
    nominal: tuple[int, int] | None,
    margins: tuple[int, int],
    scheme_is_valid: bool = False,
    correct_shift: bool = True,
    layers: list[int] | None = None,
    oversize: tuple[int, int] | None = None,
) -> AlignmentPlan:
    """Plan for explicit margins (and optionally a larger canvas).

    Raises :class:`MisalignedPlan` naming the first layer and axis where the
    offsets stop being exact.
    """
    nominal, layers = _resolve(arch, nominal, layers)
    upto = max(layers)
    if oversize is None:
        oversize = (nominal[0] + 2 * margins[0], nominal[1] + 2 * margins[1])
    if margins[0] < 0 or margins[1] < 0:
        raise MisalignedPlan(f"negative margins {margins}", 0, "rows" if margins[0] < 0 else "cols")
    rows = _axis_plan(arch, nominal[0], margins[0], upto, scheme_is_valid, "rows", oversize[0])
    cols = _axis_plan(arch, nominal[1], margins[1], upto, scheme_is_valid, "cols", oversize[1])
    las = _layer_alignments(arch, nominal, rows, cols, layers, scheme_is_valid, correct_shift)
    last = max(layers)
    total = (
        principal_shift(arch, nominal[0], last, scheme_is_valid),
        principal_shift(arch, nominal[1], last, scheme_is_valid),
    )
    return AlignmentPlan(
        arch=arch.name,
        nominal=nominal,
        oversize=tuple(oversize),
        margins=tuple(margins),
        layers=las,
        total_shift_exact=total,
        scheme_is_valid=scheme_is_valid,
        corrected=correct_shift,
    )


# ------------------------------------------------------------------- cropping


def crop_optimal(features: list, plan: AlignmentPlan) -> list[np.ndarray]:
    """Cut the padded-path window out of each valid-path capture.

    ``features`` is a list of arrays or of ``(layer, array)`` pairs, one per
    plan layer, computed on the plan's oversized canvas with no padding.
    """
    if len(features) != len(plan.layers):
        raise ValueError(f"expected {len(plan.layers)} feature maps, got {len(features)}")
    out = []
    for item, la in zip(features, plan.layers):
        if isinstance(item, tuple):
            li, f = item
            if li != la.layer:
                raise ValueError(f"feature for layer {li} where the plan expects layer {la.layer}")
        else:
            f = item
        if tuple(f.shape[1:]) != la.valid_shape:
            raise ValueError(f"layer {la.layer}: valid feature {f.shape[1:]} != planned {la.valid_shape}")
        t, l, h, w = la.crop
        out.append(f[:, :, t : t + h, l : l + w])
    return out


def interior_mask(la: LayerAlignment) -> np.ndarray:
    """Boolean (h, w) mask of pixels that never see a padded value."""
    _, h, w = la.algo_shape
    m = np.zeros((h, w), dtype=bool)
    r0, r1 = la.interior_rows
    c0, c1 = la.interior_cols
    m[r0:r1, c0:c1] = True
    return m


@dataclass(frozen=True)
class Violation:
    layer: int
    count: int
    max_abs: float
    rows: tuple[int, int]  # bounding box of offending pixels, half-open
    cols: tuple[int, int]

    def __str__(self) -> str:
        return (
            f"layer {self.layer}: {self.count} interior pixels differ (max {self.max_abs:.3g}) "
            f"in rows [{self.rows[0]}, {self.rows[1]}) cols [{self.cols[0]}, {self.cols[1]})"
        )


def interior_violations(algo: list, optimal: list, plan: AlignmentPlan, tol: float = 1e-5) -> list[Violation]:
    """Interior pixels where padded and cropped valid features disagree."""
    out = []
    for a, o, la in zip(algo, optimal, plan.layers):
        if a.shape != o.shape:
            raise ValueError(f"layer {la.layer}: shapes {a.shape} and {o.shape} differ")
        diff = np.abs(a.astype(np.float64) - o.astype(np.float64)).max(axis=(0, 1))
        bad = (diff > tol) & interior_mask(la)
        if bad.any():
            r, c = np.nonzero(bad)
            out.append(
                Violation(la.layer, int(bad.sum()), float(diff[bad].max()),
                          (int(r.min()), int(r.max()) + 1), (int(c.min()), int(c.max()) + 1))
            )
    return out
