"""Command-line entry point: ``pppkit <command> ...``.

Every failure prints one line ``error: <category>: <message>`` to stderr and
exits nonzero, so scripts can dispatch on the category.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .alignment import MisalignedPlan, compute_plan
from .config import ConfigError, DatasetSpec, RunConfig, TrainSpec
from .data import DatasetError, DirectorySource, ProceduralSource, Standardized, gen_data, make_classify, standardize
from .imageio import ImageFormatError
from .metrics import measure_maps, ppp_map, render_heatmap, reports_from, write_reports_csv
from .netspec import REGISTRY, ArchError, get_arch
from .network import forward_capture
from .padding import PaddingError, PaddingScheme
from .rng import RngStream
from .training import DivergenceError, TrainConfig, accuracy, train

log = logging.getLogger("pppkit")

MEASURE_IMAGES = 480
EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------- plumbing


def _train_cfg(spec: TrainSpec) -> TrainConfig:
    return TrainConfig(spec.epochs, spec.batch_size, spec.lr, spec.momentum, spec.weight_decay)


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    top = {}
    for key in ("arch", "scheme", "seed", "task", "grid"):
        v = getattr(args, key, None)
        if v is not None:
            top[key] = v
    if getattr(args, "nominal", None):
        top["nominal"] = tuple(args.nominal)
    if getattr(args, "measure_images", None):
        top["measure_images"] = args.measure_images
    if getattr(args, "every", None):
        top["snapshot_every"] = args.every
    if getattr(args, "out", None):
        top["output_dir"] = str(args.out)
    tr = {k: getattr(args, k) for k in ("epochs", "lr", "batch_size", "train_size") if getattr(args, k, None) is not None}
    ds = {}
    if getattr(args, "data", None):
        ds = {"kind": "directory", "path": str(args.data)}
    try:
        cfg = replace(cfg, train=replace(cfg.train, **tr), dataset=replace(cfg.dataset, **ds), **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _training_data(cfg: RunConfig, arch):
    size = arch.input_size[1]
    if cfg.task == "classify":
        x, y = make_classify(cfg.train.train_size, size, cfg.seed, "train", cfg.grid)
        xt, yt = make_classify(max(1, cfg.train.train_size // 4), size, cfg.seed, "test", cfg.grid)
    else:
        from .experiments.bhv import BHVConfig, gen_bhv

        bc = BHVConfig(canvas=size, n_train=cfg.train.train_size, n_test=max(1, cfg.train.train_size // 4), seed=cfg.seed)
        x, y, _ = gen_bhv(bc, "train")
        xt, yt, _ = gen_bhv(bc, "similar_test")
    return standardize(x, cfg.norm), y, standardize(xt, cfg.norm), yt


def _image_source(cfg: RunConfig, canvas: tuple[int, int], count: int | None = None):
    ds: DatasetSpec = cfg.dataset
    if ds.kind == "directory":
        src = DirectorySource(ds.path, canvas)
    else:
        if ds.size < max(canvas):
            raise DatasetError(f"procedural images of {ds.size} px are smaller than the required {canvas[0]}x{canvas[1]} canvas")
        src = ProceduralSource(ds.seed, ds.count, ds.size, canvas)
    n = count or cfg.measure_images or MEASURE_IMAGES
    if n > len(src):
        raise DatasetError(f"dataset holds {len(src)} images, {n} requested")
    return Standardized(src.limit(n), cfg.norm)


def _load_checkpoint(path):
    ck = ckpt.load(path)
    if "config" not in ck.meta:
        raise ckpt.CheckpointError(f"{path}: checkpoint carries no run config")
    cfg = RunConfig.from_dict(ck.meta["config"])
    return ck, cfg


def _save(out: Path, name: str, arch, params, epoch: int, cfg: RunConfig, extra=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    ckpt.save(path, ckpt.Checkpoint(arch.name, epoch, params, {"config": cfg.to_dict(), **(extra or {})}))
    return path


def _plan_for(arch, cfg: RunConfig, correct_shift=True):
    return compute_plan(arch, cfg.nominal, cfg.padding.is_valid, correct_shift, cfg.capture_layers)


# --------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    archs = [args.arch] if args.arch else sorted(REGISTRY)
    for name in archs:
        arch = get_arch(name)
        plan = compute_plan(arch, tuple(args.nominal) if args.nominal else None)
        need = max(plan.oversize)
        if args.size < need:
            print(f"warning: {name} at {plan.nominal[0]}x{plan.nominal[1]} needs {need} px images, generating {args.size}",
                  file=sys.stderr)
    out = gen_data(args.out, args.count, args.size, args.seed)
    print(f"wrote {args.count} images to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    arch = cfg.arch_spec()
    x, y, xt, yt = _training_data(cfg, arch)
    rng = RngStream(cfg.seed, "train")
    params, losses = train(arch, x, y, cfg.padding, _train_cfg(cfg.train), rng)
    out = Path(cfg.output_dir)
    path = _save(out, "final.ckpt", arch, params, cfg.train.epochs, cfg, {"losses": losses})
    (out / "config.json").write_text(cfg.to_json() + "\n")
    acc = accuracy(arch, params, xt, yt, cfg.padding, rng.child("eval"))
    loss = f"{losses[-1]:.4f}" if losses else "n/a"
    print(f"checkpoint {path}  final loss {loss}  held-out accuracy {acc:.2f}%")
    return 0


def cmd_measure(args) -> int:
    if args.checkpoint is None:
        if not args.explain or not args.arch:
            raise UsageError("measure needs --checkpoint, or --explain with --arch")
        arch = get_arch(args.arch)
        scheme = PaddingScheme.parse(args.scheme or "zeros")
        plan = compute_plan(arch, tuple(args.nominal) if args.nominal else None, scheme.is_valid, not args.no_correct)
        print(plan.to_json())
        return 0
    ck, cfg = _load_checkpoint(args.checkpoint)
    if args.nominal:
        cfg = replace(cfg, nominal=tuple(args.nominal))
    if args.data:
        cfg = replace(cfg, dataset=replace(cfg.dataset, kind="directory", path=str(args.data)))
    cfg = cfg.validate()
    arch = cfg.arch_spec()
    plan = _plan_for(arch, cfg, not args.no_correct)
    if args.explain:
        print(plan.to_json())
    images = _image_source(cfg, plan.oversize, args.measure_images)
    maps = measure_maps(arch, ck.params, images, cfg.padding, plan, RngStream(cfg.seed, "measure"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = Path(args.checkpoint).stem
    reports = reports_from(maps, arch.name, str(cfg.padding), name)
    write_reports_csv(out / "metrics.csv", reports)
    for m, _ in maps:
        render_heatmap(m, out / f"ppp_layer{m.layer:02d}.pgm")
    for r in reports:
        print(",".join(r.row()))
    return 0


def cmd_render(args) -> int:
    ck, cfg = _load_checkpoint(args.checkpoint)
    arch = cfg.arch_spec()
    plan = _plan_for(arch, cfg)
    layer = plan.capture_layers[-1] if args.layer is None else args.layer
    if layer not in plan.capture_layers:
        raise UsageError(f"layer {layer} is not a capture layer; choose from {plan.capture_layers}")
    images = _image_source(cfg, plan.oversize, args.measure_images)
    m = ppp_map(arch, ck.params, images, cfg.padding, plan, layer, RngStream(cfg.seed, "measure"))
    render_heatmap(m, args.out)
    print(f"wrote {args.out}  ({m.data.shape[-2]}x{m.data.shape[-1]}, layer {layer}, n={m.n})")
    return 0


def cmd_chrono(args) -> int:
    from .experiments.chrono import CHRONO_IMAGES, CHRONO_NOMINAL, run_chronological

    cfg = _run_config(args)
    if cfg.task != "classify":
        raise ConfigError("chrono runs on the classify task")
    if cfg.nominal is None:
        cfg = replace(cfg, nominal=CHRONO_NOMINAL)
    if cfg.measure_images is None:
        cfg = replace(cfg, measure_images=CHRONO_IMAGES)
    arch = cfg.arch_spec()
    x, y, _, _ = _training_data(cfg, arch)
    plan = _plan_for(arch, cfg)
    images = _image_source(cfg, plan.oversize)[0:cfg.measure_images]
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    run_chronological(
        arch, cfg.padding, x, y, images, plan, _train_cfg(cfg.train), cfg.seed, cfg.snapshot_every, out,
        meta={"config": cfg.to_dict()},
    )
    print((out / "chrono.csv").read_text(), end="")
    return 0


def cmd_bhv(args) -> int:
    from .experiments.bhv import BHV_CSV_HEADER, BHV_TRAIN, BHVConfig, result_rows, run_bhv

    base = get_arch("bhv_cnn")
    scheme = PaddingScheme.parse(args.scheme)
    cfg = BHVConfig(background=args.background, n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    tc = replace(BHV_TRAIN, **{k: getattr(args, k) for k in ("epochs", "lr") if getattr(args, k) is not None})
    res = run_bhv(base, scheme, args.conv_mode, cfg, tc, args.trials, args.trajectories, args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BHV_CSV_HEADER)
    w.writerows(result_rows(res))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(buf.getvalue())
    print(buf.getvalue(), end="")
    s, d, c = res.similar, res.dissimilar, res.inconsistency
    print(f"# similar {s[0]:.2f}+-{s[1]:.2f}  dissimilar {d[0]:.2f}+-{d[1]:.2f}  inconsistency {c[0]:.2f}+-{c[1]:.2f}",
          file=sys.stderr)
    return 0


def cmd_posenet(args) -> int:
    from .experiments.posenet import run_posenet

    ck, cfg = _load_checkpoint(args.checkpoint)
    arch = cfg.arch_spec()
    nominal = tuple(args.nominal) if args.nominal else tuple(arch.input_size[1:])
    layer = arch.capture_layers[-1] if args.layer is None else args.layer
    if layer not in arch.capture_layers:
        raise UsageError(f"layer {layer} is not a capture layer; choose from {arch.capture_layers}")
    images = _image_source(cfg, nominal, args.train_count + args.test_count)
    feats = []
    for a in range(0, len(images), 16):
        batch = images[a : a + 16]
        ids = np.arange(a, a + batch.shape[0])
        feats.append(forward_capture(arch, ck.params, batch, cfg.padding, RngStream(cfg.seed, "posenet-features"),
                                     sample_ids=ids, layers=[layer])[0][1])
    f = np.concatenate(feats)
    run = run_posenet(f[: args.train_count], f[args.train_count :], args.trials, args.epochs, seed=cfg.seed, layer=layer)
    s = run.summary()
    keys = ("layer", "trials", "diverged", "spc_mean", "spc_std", "mae_mean", "mae_std")
    lines = [",".join(keys), ",".join(format(s[k], ".6g") if isinstance(s[k], float) else str(s[k]) for k in keys)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


# ----------------------------------------------------------------- parser


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run config JSON; flags below override it")
    p.add_argument("--arch")
    p.add_argument("--scheme")
    p.add_argument("--seed", type=int)
    p.add_argument("--task")
    p.add_argument("--grid", type=int, help="classify task: grid x grid position classes")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--train-size", type=int)
    p.add_argument("--data", type=Path, help="directory of PGM/PPM images (default: procedural)")
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pppkit", description="Measure position information injected by CNN padding.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write procedural value-noise images")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=480)
    p.add_argument("--size", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", help="warn when images are too small for this arch (default: all)")
    p.add_argument("--nominal", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write final.ckpt")
    _run_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("measure", help="PPP metrics CSV and heatmaps for a checkpoint")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--nominal", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--measure-images", type=int)
    p.add_argument("--out", type=Path, default=Path("measure"))
    p.add_argument("--explain", action="store_true", help="print the alignment plan as JSON")
    p.add_argument("--no-correct", action="store_true", help="disable principal-point shift correction")
    p.add_argument("--arch", help="with --explain and no checkpoint: arch to plan for")
    p.add_argument("--scheme", help="with --explain and no checkpoint: padding scheme")
    p.set_defaults(fn=cmd_measure)

    p = sub.add_parser("render", help="PGM heatmap of one layer's PPP map")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--layer", type=int)
    p.add_argument("--measure-images", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("chrono", help="train and measure every N epochs")
    _run_flags(p)
    p.add_argument("--every", type=int, help="snapshot period in epochs")
    p.add_argument("--nominal", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--measure-images", type=int)
    p.set_defaults(fn=cmd_chrono)

    p = sub.add_parser("bhv", help="red/green square test with a location bias")
    p.add_argument("--scheme", default="zeros")
    p.add_argument("--conv-mode", default="same", choices=("same", "full"))
    p.add_argument("--background", type=float, default=0.0)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--trajectories", type=int, default=228)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="CSV path")
    p.set_defaults(fn=cmd_bhv)

    p = sub.add_parser("posenet", help="position-reconstruction baseline on frozen features")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--layer", type=int)
    p.add_argument("--nominal", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--train-count", type=int, default=64)
    p.add_argument("--test-count", type=int, default=32)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--out", type=Path, help="CSV path")
    p.set_defaults(fn=cmd_posenet)
    return parser


def _category(exc: BaseException) -> str:
    if isinstance(exc, UsageError):
        return "usage"
    if isinstance(exc, MisalignedPlan):
        return "plan"
    if isinstance(exc, (ConfigError, ArchError, PaddingError)):
        return "config"
    if isinstance(exc, ckpt.CheckpointError):
        return "checkpoint"
    if isinstance(exc, (DatasetError, ImageFormatError)):
        return "data"
    if isinstance(exc, DivergenceError):
        return "diverged"
    if isinstance(exc, OSError):
        return "io"
    if isinstance(exc, ValueError):
        return "invalid"
    return "internal"


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        return args.fn(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one error line
        cat = _category(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {cat}: {msg}", file=sys.stderr)
        if cat == "internal":
            log.debug("unhandled error", exc_info=True)
        return EXIT_USAGE if cat == "usage" else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
