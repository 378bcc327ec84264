"""Running an :class:`ArchSpec`: initialisation, forward passes, gradients, SGD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .netspec import ArchSpec, BatchNorm, Conv, GlobalAvgPool, Linear, MaxPool, ReLU
from .padding import PadAmounts, PaddingScheme, pad_amounts_for, pad_backward, pad_forward
from .rng import RngStream

TRAINABLE = ("weight", "bias", "gamma", "beta")
BUFFERS = ("running_mean", "running_var")

ZEROS = PaddingScheme("zeros")

ParamSet = dict  # layer key -> {tensor name -> ndarray}


def layer_key(i: int) -> str:
    return f"l{i:02d}"


def init_params(arch: ArchSpec, rng: RngStream, dtype=np.float32) -> ParamSet:
    """He-uniform (fan-in) weights, zero biases, identity batchnorm."""
    params: ParamSet = {}
    shapes = arch.shapes()
    c = arch.input_size[0]
    init = rng.child("init")
    for i, layer in enumerate(arch.layers):
        g = init.generator(i)
        if isinstance(layer, Conv):
            fan_in = c * layer.k * layer.k
            bound = np.sqrt(6.0 / fan_in)
            params[layer_key(i)] = {
                "weight": g.uniform(-bound, bound, (layer.out_ch, c, layer.k, layer.k)).astype(dtype),
                "bias": np.zeros(layer.out_ch, dtype=dtype),
            }
        elif isinstance(layer, BatchNorm):
            params[layer_key(i)] = {
                "gamma": np.ones(c, dtype=dtype),
                "beta": np.zeros(c, dtype=dtype),
                "running_mean": np.zeros(c, dtype=dtype),
                "running_var": np.ones(c, dtype=dtype),
            }
        elif isinstance(layer, Linear):
            bound = np.sqrt(6.0 / c)
            params[layer_key(i)] = {
                "weight": g.uniform(-bound, bound, (layer.out, c)).astype(dtype),
                "bias": np.zeros(layer.out, dtype=dtype),
            }
        c = shapes[i][0]
    return params


def copy_params(params: ParamSet) -> ParamSet:
    return {k: {n: a.copy() for n, a in d.items()} for k, d in params.items()}


def _amounts(layer, h: int, w: int, scheme: PaddingScheme) -> PadAmounts:
    if scheme.is_valid:
        return PadAmounts()
    rows = pad_amounts_for(layer.pad_mode, layer.k, layer.stride, h)
    cols = pad_amounts_for(layer.pad_mode, layer.k, layer.stride, w)
    return PadAmounts.from_axes(rows, cols)


@dataclass
class Trace:
    out: np.ndarray
    captures: dict = field(default_factory=dict)
    tape: list = field(default_factory=list)


def forward(
    arch: ArchSpec,
    params: ParamSet,
    x: np.ndarray,
    scheme: PaddingScheme = ZEROS,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    train: bool = False,
    upto: int | None = None,
    record: bool = False,
    update_stats: bool = True,
    capture: set[int] | None = None,
) -> Trace:
    """Run the network on an NCHW batch.

    ``upto`` stops after that layer; ``capture`` overrides which layers' outputs
    are kept (default: the layers flagged in the arch). ``record`` keeps what :func:`backward`
    needs. In ``train`` mode batchnorm uses batch statistics and, when
    ``update_stats`` is set, updates the running buffers in ``params``.
    """
    x = T.check_finite(np.asarray(x), "network input")
    if x.ndim != 4 or x.shape[1] != arch.input_size[0]:
        raise T.ShapeError(f"{arch.name} expects (N, {arch.input_size[0]}, H, W) input, got {x.shape}")
    pad_rng = rng.child("pad") if rng is not None else None
    trace = Trace(out=x)
    tape = trace.tape
    layers = arch.layers
    last = len(layers) - 1 if upto is None else upto
    prepadded: set[int] = set()
    capture = set(arch.capture_layers) if capture is None else set(capture)

    for i, layer in enumerate(layers[: last + 1]):
        p = params.get(layer_key(i))
        capture_now = i in capture
        if isinstance(layer, (Conv, MaxPool)):
            if i not in prepadded:
                a = _amounts(layer, x.shape[2], x.shape[3], scheme)
                x, ctx = pad_forward(x, a, scheme, pad_rng, sample_ids=sample_ids, layer=i)
                if record:
                    tape.append(("pad", ctx))
            if isinstance(layer, Conv):
                y = T.conv2d(x, p["weight"], p["bias"], layer.stride)
                if record:
                    tape.append(("conv", (i, x, layer.stride)))
            else:
                y, idx = T.maxpool2d(x, layer.k, layer.stride)
                if record:
                    tape.append(("maxpool", (idx, x.shape, layer.k, layer.stride)))
            x = y
        elif isinstance(layer, ReLU):
            nxt = layers[i + 1] if i + 1 < len(layers) and i + 1 <= last else None
            reorder = isinstance(nxt, Conv) and nxt.pad_placement == "before_activation"
            if reorder:
                # convolution-normalization-padding-activation ordering
                h, w = x.shape[2], x.shape[3]
                a = _amounts(nxt, h, w, scheme)
                x, ctx = pad_forward(x, a, scheme, pad_rng, sample_ids=sample_ids, layer=i + 1)
                if record:
                    tape.append(("pad", ctx))
                prepadded.add(i + 1)
                if record:
                    tape.append(("relu", x))
                x = T.relu(x)
                if capture_now:
                    trace.captures[i] = x[:, :, a.top : a.top + h, a.left : a.left + w]
                continue
            if record:
                tape.append(("relu", x))
            x = T.relu(x)
        elif isinstance(layer, BatchNorm):
            if train:
                y, cache, mean, var = T.batchnorm_train(x, p["gamma"], p["beta"])
                if update_stats:
                    m = x.shape[0] * x.shape[2] * x.shape[3]
                    unbiased = var * m / max(m - 1, 1)
                    p["running_mean"][...] = (1 - T.BN_MOMENTUM) * p["running_mean"] + T.BN_MOMENTUM * mean
                    p["running_var"][...] = (1 - T.BN_MOMENTUM) * p["running_var"] + T.BN_MOMENTUM * unbiased
                if record:
                    tape.append(("bn", (i, cache)))
            else:
                y = T.batchnorm_eval(x, p["gamma"], p["beta"], p["running_mean"], p["running_var"])
                if record:
                    raise ValueError("backward through inference-mode batchnorm is not supported")
            x = y
        elif isinstance(layer, GlobalAvgPool):
            if record:
                tape.append(("gap", x.shape))
            x = T.global_avg_pool(x)
        elif isinstance(layer, Linear):
            y = T.linear(x, p["weight"], p["bias"])
            if record:
                tape.append(("linear", (i, x)))
            x = y
        if capture_now:
            trace.captures[i] = x
    trace.out = x
    return trace


def backward(arch: ArchSpec, params: ParamSet, trace: Trace, dout: np.ndarray) -> ParamSet:
    """Gradients of every trainable tensor given d(loss)/d(output)."""
    grads: ParamSet = {}
    g = dout
    # Nothing below the first parameterised op needs a gradient.
    first = next((j for j, (op, _) in enumerate(trace.tape) if op in ("conv", "bn", "linear")), 0)
    for j in range(len(trace.tape) - 1, first - 1, -1):
        op, cache = trace.tape[j]
        if op == "linear":
            i, x = cache
            p = params[layer_key(i)]
            g, dw, db = T.linear_backward(g, x, p["weight"])
            grads[layer_key(i)] = {"weight": dw, "bias": db}
        elif op == "gap":
            g = T.global_avg_pool_backward(g, cache)
        elif op == "relu":
            g = T.relu_backward(g, cache)
        elif op == "bn":
            i, bn_cache = cache
            p = params[layer_key(i)]
            g, dgamma, dbeta = T.batchnorm_backward(g, bn_cache, p["gamma"])
            grads[layer_key(i)] = {"gamma": dgamma, "beta": dbeta}
        elif op == "conv":
            i, x, stride = cache
            p = params[layer_key(i)]
            g, dw, db = T.conv2d_backward(g, x, p["weight"], stride, need_dx=j > first)
            grads[layer_key(i)] = {"weight": dw, "bias": db}
        elif op == "maxpool":
            idx, shape, k, stride = cache
            g = T.maxpool2d_backward(g, idx, shape, k, stride)
        elif op == "pad":
            g = pad_backward(g, cache)
    return grads


def forward_capture(
    arch: ArchSpec,
    params: ParamSet,
    x: np.ndarray,
    scheme: PaddingScheme = ZEROS,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    layers: list[int] | None = None,
) -> list[tuple[int, np.ndarray]]:
    """Inference-mode features at the capture layers (or at ``layers``)."""
    wanted = arch.capture_layers if layers is None else list(layers)
    if any(i > arch.last_spatial for i in wanted):
        raise ValueError(f"capture layers must be spatial (<= {arch.last_spatial}), got {wanted}")
    trace = forward(arch, params, x, scheme, rng, sample_ids=sample_ids, upto=max(wanted), capture=set(wanted))
    return [(i, trace.captures[i]) for i in wanted]


def forward_backward(
    arch: ArchSpec,
    params: ParamSet,
    batch: np.ndarray,
    labels,
    scheme: PaddingScheme = ZEROS,
    rng: RngStream | None = None,
    *,
    sample_ids=None,
    update_stats: bool = True,
) -> tuple[float, ParamSet]:
    """Mean softmax cross-entropy of a training-mode pass and its gradients."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= arch.num_classes):
        raise ValueError(f"label out of range [0, {arch.num_classes})")
    trace = forward(
        arch, params, batch, scheme, rng, sample_ids=sample_ids, train=True, record=True, update_stats=update_stats
    )
    loss, dlogits = T.softmax_cross_entropy(trace.out, labels)
    return loss, backward(arch, params, trace, dlogits)


def predict(arch, params, x, scheme=ZEROS, rng=None, *, sample_ids=None, batch_size: int = 256) -> np.ndarray:
    n = x.shape[0]
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    out = []
    for a in range(0, n, batch_size):
        logits = forward(arch, params, x[a : a + batch_size], scheme, rng, sample_ids=ids[a : a + batch_size]).out
        out.append(logits.argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def grad_norm(grads: ParamSet) -> float:
    return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for d in grads.values() for g in d.values())))


def sgd_step(params: ParamSet, grads: ParamSet, lr: float, momentum: float = 0.0, velocity: ParamSet | None = None):
    """In-place SGD with momentum: ``v = momentum * v + g``; ``p -= lr * v``.

    Returns the (mutated) ``params`` and the velocity state to pass next time.
    """
    velocity = {} if velocity is None else velocity
    for key, gd in grads.items():
        for name, g in gd.items():
            p = params[key][name]
            if p.shape != g.shape:
                raise T.ShapeError(f"{key}.{name}: parameter {p.shape} vs gradient {g.shape}")
            v = velocity.setdefault(key, {}).get(name)
            v = g.astype(np.float64) if v is None else momentum * v + g
            velocity[key][name] = v
            if lr != 0:
                p[...] = (p.astype(np.float64) - lr * v).astype(p.dtype)
    return params, velocity


class SGD:
    """Stateful wrapper around :func:`sgd_step`."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: ParamSet = {}

    def step(self, params: ParamSet, grads: ParamSet) -> None:
        sgd_step(params, grads, self.lr, self.momentum, self.velocity)
