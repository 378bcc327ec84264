"""Layer-stack descriptions, the built-in architectures and coordinate maps.

A network is a flat sequence of layers. Only ``Conv`` and ``MaxPool`` move
pixels; every other layer is pointwise in space. Each spatial layer maps an
output index ``j`` to the centre of its window in input coordinates,
``s * j + (k - 1) / 2 - pad_low``, and stacking layers composes these affine
maps exactly (with :class:`fractions.Fraction`).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import ClassVar, Union

from .padding import PAD_MODES, pad_amounts_for

ARCH_SCHEMA = "pppkit.arch/1"
PLACEMENTS = ("before_conv", "before_activation")


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class Conv:
    out_ch: int
    k: int = 3
    stride: int = 1
    pad_mode: str = "same"
    pad_placement: str = "before_conv"
    capture: bool = False
    kind: ClassVar[str] = "conv"


@dataclass(frozen=True)
class MaxPool:
    k: int = 2
    stride: int = 2
    pad_mode: str = "valid"
    capture: bool = False
    kind: ClassVar[str] = "maxpool"


@dataclass(frozen=True)
class BatchNorm:
    capture: bool = False
    kind: ClassVar[str] = "batchnorm"


@dataclass(frozen=True)
class ReLU:
    capture: bool = False
    kind: ClassVar[str] = "relu"


@dataclass(frozen=True)
class GlobalAvgPool:
    kind: ClassVar[str] = "gap"


@dataclass(frozen=True)
class Linear:
    out: int
    kind: ClassVar[str] = "linear"


LayerSpec = Union[Conv, MaxPool, BatchNorm, ReLU, GlobalAvgPool, Linear]
_KINDS = {cls.kind: cls for cls in (Conv, MaxPool, BatchNorm, ReLU, GlobalAvgPool, Linear)}


def is_spatial(layer: LayerSpec) -> bool:
    return isinstance(layer, (Conv, MaxPool))


@dataclass(frozen=True)
class AxisStep:
    """One spatial layer along one axis."""

    layer: int
    k: int
    stride: int
    pad_lo: int
    pad_hi: int
    in_extent: int
    out_extent: int


@dataclass(frozen=True)
class ArchSpec:
    name: str
    input_size: tuple[int, int, int]
    layers: tuple
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "layers", tuple(self.layers))
        self._validate()

    # ------------------------------------------------------------ validation
    def _validate(self) -> None:
        if not self.capture_layers:
            raise ArchError(f"{self.name}: at least one capture layer is required")
        pooled = False
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv, MaxPool)):
                if layer.pad_mode not in PAD_MODES:
                    raise ArchError(f"{self.name}: layer {i} has unknown pad_mode {layer.pad_mode!r}")
                if layer.k < 1 or layer.stride < 1:
                    raise ArchError(f"{self.name}: layer {i} has invalid window")
            if isinstance(layer, Conv) and layer.pad_placement not in PLACEMENTS:
                raise ArchError(f"{self.name}: layer {i} has unknown pad_placement {layer.pad_placement!r}")
            if isinstance(layer, GlobalAvgPool):
                pooled = True
            elif pooled and not isinstance(layer, Linear):
                raise ArchError(f"{self.name}: layer {i} ({layer.kind}) follows global pooling")
            elif isinstance(layer, Linear) and not pooled:
                raise ArchError(f"{self.name}: linear layer {i} before global pooling")
        if not isinstance(self.layers[-1], Linear) or self.layers[-1].out != self.num_classes:
            raise ArchError(f"{self.name}: must end in a Linear({self.num_classes}) head")
        self.shapes()

    # -------------------------------------------------------------- geometry
    @property
    def capture_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if getattr(layer, "capture", False)]

    @property
    def last_spatial(self) -> int:
        return max(i for i, layer in enumerate(self.layers) if not isinstance(layer, (GlobalAvgPool, Linear)))

    def shapes(self, hw: tuple[int, int] | None = None, valid: bool = False) -> list[tuple[int, ...]]:
        """Output shape after every layer: (c, h, w) in the trunk, (features,) in the head."""
        c, h, w = self.input_size
        if hw is not None:
            h, w = hw
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv, MaxPool)):
                ph = (0, 0) if valid else pad_amounts_for(layer.pad_mode, layer.k, layer.stride, h)
                pw = (0, 0) if valid else pad_amounts_for(layer.pad_mode, layer.k, layer.stride, w)
                hh, ww = h + sum(ph), w + sum(pw)
                if hh < layer.k or ww < layer.k:
                    raise ArchError(f"{self.name}: layer {i} ({layer.kind} k={layer.k}) gets a {hh}x{ww} input")
                h = (hh - layer.k) // layer.stride + 1
                w = (ww - layer.k) // layer.stride + 1
                if isinstance(layer, Conv):
                    c = layer.out_ch
                out.append((c, h, w))
            elif isinstance(layer, GlobalAvgPool):
                out.append((c,))
            elif isinstance(layer, Linear):
                c = layer.out
                out.append((c,))
            else:
                out.append(out[-1] if out else (c, h, w))
        return out

    def axis_steps(self, extent: int, upto: int | None = None, valid: bool = False) -> list[AxisStep]:
        """Per-axis view of the spatial layers with index <= ``upto``."""
        upto = self.last_spatial if upto is None else upto
        steps = []
        n = extent
        for i, layer in enumerate(self.layers[: upto + 1]):
            if not is_spatial(layer):
                continue
            lo, hi = (0, 0) if valid else pad_amounts_for(layer.pad_mode, layer.k, layer.stride, n)
            m = (n + lo + hi - layer.k) // layer.stride + 1
            if m < 1:
                raise ArchError(f"{self.name}: layer {i} has no output on a {n}-pixel axis")
            steps.append(AxisStep(i, layer.k, layer.stride, lo, hi, n, m))
            n = m
        return steps

    def with_conv_mode(self, mode: str) -> "ArchSpec":
        """Same network with every convolution switched to ``mode`` padding."""
        layers = tuple(replace(l, pad_mode=mode) if isinstance(l, Conv) else l for l in self.layers)
        suffix = "" if mode == "same" else f"+{mode}"
        return replace(self, name=self.name + suffix, layers=layers)

    def with_num_classes(self, k: int) -> "ArchSpec":
        layers = self.layers[:-1] + (Linear(k),)
        return replace(self, layers=layers, num_classes=k)

    # --------------------------------------------------------- serialization
    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"kind": layer.kind}
            d.update(asdict(layer))
            layers.append(d)
        return {
            "schema": ARCH_SCHEMA,
            "name": self.name,
            "input_size": list(self.input_size),
            "num_classes": self.num_classes,
            "layers": layers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        if d.get("schema") != ARCH_SCHEMA:
            raise ArchError(f"unsupported arch schema {d.get('schema')!r}")
        layers = []
        for item in d["layers"]:
            item = dict(item)
            kind = item.pop("kind")
            if kind not in _KINDS:
                raise ArchError(f"unknown layer kind {kind!r}")
            try:
                layers.append(_KINDS[kind](**item))
            except TypeError as exc:
                raise ArchError(f"bad fields for {kind} layer: {exc}") from None
        return cls(d["name"], tuple(d["input_size"]), tuple(layers), int(d["num_classes"]))

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ registry


def mini_vgg(num_classes: int = 4) -> ArchSpec:
    """Stride-1 3x3 convolutions with 2x2 max pooling; four capture layers."""
    layers = (
        Conv(8), ReLU(), Conv(8), ReLU(capture=True), MaxPool(2, 2),
        Conv(16), ReLU(), Conv(16), ReLU(capture=True), MaxPool(2, 2),
        Conv(16), ReLU(capture=True), MaxPool(2, 2),
        Conv(32), ReLU(capture=True),
        GlobalAvgPool(), Linear(num_classes),
    )
    return ArchSpec("mini_vgg", (3, 48, 48), layers, num_classes)


def mini_resnet(num_classes: int = 10) -> ArchSpec:
    """Plain stack with the stride/padding profile of a ResNet trunk."""
    layers = (
        Conv(8, k=7, stride=2), BatchNorm(), ReLU(),
        MaxPool(3, 2, pad_mode="same"),
        Conv(8), BatchNorm(), ReLU(capture=True),
        Conv(16, stride=2), BatchNorm(), ReLU(), Conv(16), BatchNorm(), ReLU(capture=True),
        Conv(16, stride=2), BatchNorm(), ReLU(), Conv(16), BatchNorm(), ReLU(capture=True),
        Conv(32, stride=2), BatchNorm(), ReLU(), Conv(32), BatchNorm(), ReLU(capture=True),
        GlobalAvgPool(), Linear(num_classes),
    )
    return ArchSpec("mini_resnet", (3, 224, 224), layers, num_classes)


def bhv_cnn(num_classes: int = 2) -> ArchSpec:
    """Four conv blocks whose receptive field spans the whole 32x32 canvas."""
    layers = (
        Conv(8), ReLU(capture=True),
        Conv(8), ReLU(capture=True), MaxPool(2, 2),
        Conv(16), ReLU(capture=True), MaxPool(2, 2),
        Conv(16, k=5), ReLU(capture=True), MaxPool(2, 2),
        GlobalAvgPool(), Linear(num_classes),
    )
    return ArchSpec("bhv_cnn", (3, 32, 32), layers, num_classes)


REGISTRY = {"mini_vgg": mini_vgg, "mini_resnet": mini_resnet, "bhv_cnn": bhv_cnn}


def get_arch(name: str) -> ArchSpec:
    base, _, mode = name.partition("+")
    if base not in REGISTRY:
        raise ArchError(f"unknown architecture {name!r}; registered: {sorted(REGISTRY)}")
    arch = REGISTRY[base]()
    return arch.with_conv_mode(mode) if mode else arch


# -------------------------------------------------------------- coordinates


@dataclass(frozen=True)
class CoordMap:
    """``input = scale * output + offset`` along one axis, exactly."""

    scale: Fraction = Fraction(1)
    offset: Fraction = Fraction(0)

    def __call__(self, j) -> Fraction:
        return self.scale * Fraction(j) + self.offset

    def then(self, inner: "CoordMap") -> "CoordMap":
        """Map for ``self`` applied after ``inner`` (``inner`` is nearer the output)."""
        return CoordMap(self.scale * inner.scale, self.scale * inner.offset + self.offset)

    def inverse(self, x) -> Fraction:
        return (Fraction(x) - self.offset) / self.scale


def step_map(step: AxisStep) -> CoordMap:
    return CoordMap(Fraction(step.stride), Fraction(step.k - 1, 2) - step.pad_lo)


def compose_steps(steps: list[AxisStep]) -> CoordMap:
    m = CoordMap()
    for step in steps:
        m = m.then(step_map(step))
    return m


def coord_map_of(
    arch: ArchSpec,
    upto: int,
    scheme_is_valid: bool = False,
    input_hw: tuple[int, int] | None = None,
) -> tuple[CoordMap, CoordMap]:
    """Row and column maps from layer ``upto``'s output back to input pixels."""
    if upto >= len(arch.layers):
        raise ArchError(f"layer {upto} out of range for {arch.name} ({len(arch.layers)} layers)")
    h, w = input_hw if input_hw is not None else arch.input_size[1:]
    upto = min(upto, arch.last_spatial)
    return (
        compose_steps(arch.axis_steps(h, upto, scheme_is_valid)),
        compose_steps(arch.axis_steps(w, upto, scheme_is_valid)),
    )


def receptive_field(steps: list[AxisStep]) -> int:
    """Receptive-field size (pixels) of one output after ``steps``."""
    size, jump = 1, 1
    for step in steps:
        size += (step.k - 1) * jump
        jump *= step.stride
    return size
