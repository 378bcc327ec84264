"""Red/green square classification with a vertical location bias.

Class 1 means the red square is left of the green one, class 0 the reverse.
In the biased training and ``similar_test`` splits class 1 lives in the upper
half of the canvas and class 0 in the lower half; ``dissimilar_test`` swaps
the halves. The dissimilar split is the similar one moved by exactly half the
canvas, so a translation-equivariant classifier scores the same on both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..netspec import ArchSpec
from ..network import ParamSet, predict
from ..padding import PaddingScheme
from ..rng import RngStream
from ..training import TrainConfig, accuracy, train

SPLITS = ("train", "similar_test", "dissimilar_test")
# the zeros model reaches ~100% on the biased split within four epochs
BHV_TRAIN = TrainConfig(epochs=4, batch_size=32, lr=0.02, momentum=0.9)
RED = (1.0, 0.0, 0.0)
GREEN = (0.0, 1.0, 0.0)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BHVConfig:
    canvas: int = 32
    square: int = 4
    background: float = 0.0
    bias: bool = True
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        half = self.canvas // 2
        if self.canvas % 2:
            raise GeometryError(f"canvas {self.canvas} must be even")
        if self.square < 1 or self.square > half:
            raise GeometryError(f"square {self.square} does not fit a {half}-pixel half canvas")
        if 2 * self.square > self.canvas:
            raise GeometryError("two squares do not fit side by side")
        if not 0.0 <= self.background <= 1.0:
            raise GeometryError(f"background level {self.background} outside [0, 1]")

    @property
    def half(self) -> int:
        return self.canvas // 2


# positions are rows of (red_top, red_left, green_top, green_left)


def _draw(cfg: BHVConfig, labels: np.ndarray, g: np.random.Generator) -> np.ndarray:
    n = labels.size
    s, half, w = cfg.square, cfg.half, cfg.canvas
    pos = np.empty((n, 4), dtype=np.int64)
    for i, lab in enumerate(labels):
        if cfg.bias:
            y0 = 0 if lab == 1 else half
            ys = g.integers(y0, y0 + half - s + 1, 2)
        else:
            ys = g.integers(0, w - s + 1, 2)
        # uniform over non-overlapping column pairs
        while True:
            left, right = (int(v) for v in g.integers(0, w - s + 1, 2))
            if right >= left + s:
                break
        if lab == 1:
            pos[i] = (ys[0], left, ys[1], right)
        else:
            pos[i] = (ys[0], right, ys[1], left)
    return pos


def render(cfg: BHVConfig, pos: np.ndarray) -> np.ndarray:
    n = pos.shape[0]
    s = cfg.square
    x = np.full((n, 3, cfg.canvas, cfg.canvas), cfg.background, dtype=np.float32)
    for i, (ry, rx, gy, gx) in enumerate(pos):
        x[i, :, ry : ry + s, rx : rx + s] = np.array(RED, dtype=np.float32)[:, None, None]
        x[i, :, gy : gy + s, gx : gx + s] = np.array(GREEN, dtype=np.float32)[:, None, None]
    return x


def labels_from_positions(pos: np.ndarray) -> np.ndarray:
    """Class from square centroids: 1 when red is left of green."""
    return (pos[:, 1] < pos[:, 3]).astype(np.int64)


def gen_bhv(cfg: BHVConfig, split: str, rng: RngStream | None = None):
    """Images, labels and square positions for one split."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    rng = RngStream(cfg.seed, "bhv") if rng is None else rng
    if split == "train":
        g = rng.generator(0)
        n = cfg.n_train
    else:
        g = rng.generator(1)
        n = cfg.n_test
    labels = np.arange(n) % 2
    labels = labels[g.permutation(n)]
    pos = _draw(cfg, labels, g)
    if split == "dissimilar_test" and cfg.bias:
        shift = np.where(labels == 1, cfg.half, -cfg.half)
        pos = pos.copy()
        pos[:, 0] += shift
        pos[:, 2] += shift
    return render(cfg, pos), labels, pos


# ----------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    start: np.ndarray  # positions at offset 0
    offsets: np.ndarray
    predictions: np.ndarray

    @property
    def switched(self) -> bool:
        return bool(np.any(self.predictions != self.predictions[0]))


def trajectory_starts(cfg: BHVConfig, n: int, rng: RngStream) -> np.ndarray:
    """Uniform legal class-1 starts: red left of green, both squares in the upper half."""
    biased = BHVConfig(cfg.canvas, cfg.square, cfg.background, True, cfg.n_train, cfg.n_test, cfg.seed)
    return _draw(biased, np.ones(n, dtype=np.int64), rng.generator(2))


def trajectories(predict_fn, cfg: BHVConfig, n: int = 228, rng: RngStream | None = None) -> list[Trajectory]:
    """Move both squares down one pixel per step until one touches the bottom.

    ``predict_fn`` maps an image batch to predicted labels.
    """
    rng = RngStream(cfg.seed, "bhv-trajectories") if rng is None else rng
    starts = trajectory_starts(cfg, n, rng)
    out = []
    for p in starts:
        last = cfg.canvas - cfg.square - max(p[0], p[2])
        offsets = np.arange(last + 1)
        pos = np.repeat(p[None], offsets.size, axis=0)
        pos[:, 0] += offsets
        pos[:, 2] += offsets
        out.append(Trajectory(p, offsets, np.asarray(predict_fn(render(cfg, pos)))))
    return out


def switch_rate(trajs: list[Trajectory]) -> float:
    if not trajs:
        raise ValueError("no trajectories")
    return 100.0 * sum(t.switched for t in trajs) / len(trajs)


def inconsistency_rate(predict_fn, cfg: BHVConfig, n_trajectories: int = 228, rng: RngStream | None = None) -> float:
    """Percentage of trajectories on which the predicted class changes."""
    return switch_rate(trajectories(predict_fn, cfg, n_trajectories, rng))


# ----------------------------------------------------------------- runs


@dataclass
class BHVTrial:
    seed: int
    similar: float
    dissimilar: float
    inconsistency: float
    losses: list = field(default_factory=list)


@dataclass
class BHVResult:
    arch: str
    scheme: str
    conv_mode: str
    background: float
    trials: list

    def _stat(self, name: str) -> tuple[float, float]:
        v = np.array([getattr(t, name) for t in self.trials], dtype=np.float64)
        return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0

    @property
    def similar(self):
        return self._stat("similar")

    @property
    def dissimilar(self):
        return self._stat("dissimilar")

    @property
    def inconsistency(self):
        return self._stat("inconsistency")

    @property
    def diff(self) -> float:
        return self.similar[0] - self.dissimilar[0]


BHV_CSV_HEADER = ("arch", "scheme", "conv_mode", "background", "trial", "seed", "similar", "dissimilar", "diff", "inconsistency")


def run_bhv(
    arch: ArchSpec,
    scheme: PaddingScheme,
    conv_mode: str,
    cfg: BHVConfig,
    train_cfg: TrainConfig,
    trials: int = 5,
    n_trajectories: int = 228,
    root_seed: int = 0,
) -> BHVResult:
    """Train ``trials`` fresh models and score both test splits and trajectories."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if conv_mode not in ("same", "full"):
        raise ValueError(f"conv_mode must be 'same' or 'full', got {conv_mode!r}")
    net = arch.with_conv_mode(conv_mode) if conv_mode != "same" else arch
    data_rng = RngStream(cfg.seed, "bhv")
    xtr, ytr, _ = gen_bhv(cfg, "train", data_rng)
    xs, ys, _ = gen_bhv(cfg, "similar_test", data_rng)
    xd, yd, _ = gen_bhv(cfg, "dissimilar_test", data_rng)
    root = RngStream(root_seed, "bhv-run")
    eval_rng = root.child("eval")
    out = []
    for t in range(trials):
        trial_rng = root.child(f"trial{t}")
        params, losses = train(net, xtr, ytr, scheme, train_cfg, trial_rng)
        fn = _predictor(net, params, scheme, eval_rng)
        out.append(
            BHVTrial(
                seed=t,
                similar=accuracy(net, params, xs, ys, scheme, eval_rng),
                dissimilar=accuracy(net, params, xd, yd, scheme, eval_rng),
                inconsistency=inconsistency_rate(fn, cfg, n_trajectories, RngStream(cfg.seed, "bhv-trajectories")),
                losses=losses,
            )
        )
    return BHVResult(net.name, str(scheme), conv_mode, cfg.background, out)


def _predictor(arch: ArchSpec, params: ParamSet, scheme: PaddingScheme, rng: RngStream):
    return lambda x: predict(arch, params, x, scheme, rng)


def result_rows(res: BHVResult) -> list[list[str]]:
    rows = []
    for i, t in enumerate(res.trials):
        rows.append([
            res.arch, res.scheme, res.conv_mode, format(res.background, "g"), str(i), str(t.seed),
            format(t.similar, ".6g"), format(t.dissimilar, ".6g"), format(t.similar - t.dissimilar, ".6g"),
            format(t.inconsistency, ".6g"),
        ])
    return rows


def binomial_halfwidth(n: int, p: float = 0.5, z: float = 3.0) -> float:
    """``z`` standard errors of an accuracy estimate, in percent."""
    return 100.0 * z * math.sqrt(p * (1 - p) / n)
