"""Dense residual network substrate: parameters, forward, gradients, SGD.

The architecture is a residual MLP: an affine stem, L residual blocks whose
branch is affine-activation-affine added to an identity shortcut, and an
affine head that emits C logits (softmax or per-class sigmoid).  Everything
is float64 numpy, with hand-derived reverse-mode gradients small enough to
audit and to check against central finite differences.

Arrays are C-order float64 throughout; any NaN/Inf produced by an operation
here is treated as an error state, not a value.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import substream
from .stochastic import (
    KIND_BLOCK,
    KIND_PATH,
    KIND_UNIT,
    MODE_TRAINING,
    MaskSample,
    StochasticSpec,
    apply_block_drop,
    apply_deterministic_scaled,
    apply_path_drop,
    apply_unit_drop,
    expand_span_mask,
    sample_mask,
)

ACT_RELU = "relu"
ACT_IDENTITY = "identity"

MODE_SOFTMAX = "softmax"
MODE_SIGMOID = "sigmoid"


class ShapeMismatchError(ValueError):
    """Incompatible array shapes; carries the offending block index
    (None when the mismatch is at the stem or head)."""

    def __init__(self, message: str, block_index: int | None = None):
        super().__init__(message)
        self.block_index = block_index


class TrainingDivergedError(RuntimeError):
    """Loss became NaN/Inf during training."""


def check_finite(arr: np.ndarray, context: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {context}")
    return arr


@dataclass
class Parameter:
    """A learnable array with its gradient buffer and a stable id."""

    value: np.ndarray
    grad: np.ndarray
    id: str

    @classmethod
    def new(cls, id: str, value: np.ndarray) -> "Parameter":
        value = np.asarray(value, dtype=np.float64)
        return cls(value=value, grad=np.zeros_like(value), id=id)


@dataclass
class ResidualBlock:
    """One residual stage: branch(x) = act(x @ w1 + b1) @ w2 + b2,
    output = x + branch(x).  ``index`` is the 1-based position."""

    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    index: int

    @property
    def width(self) -> int:
        return self.w1.value.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


@dataclass
class ResidualNet:
    stem_w: Parameter
    stem_b: Parameter
    blocks: list[ResidualBlock]
    head_w: Parameter
    head_b: Parameter
    output_mode: str = MODE_SOFTMAX
    activation: str = ACT_RELU

    @property
    def in_dim(self) -> int:
        return self.stem_w.value.shape[0]

    @property
    def width(self) -> int:
        return self.stem_w.value.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head_w.value.shape[1]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def parameters(self) -> list[Parameter]:
        params = [self.stem_w, self.stem_b]
        for blk in self.blocks:
            params.extend(blk.parameters())
        params.extend([self.head_w, self.head_b])
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def arch(self) -> dict:
        return {"in_dim": self.in_dim, "width": self.width,
                "n_blocks": self.n_blocks, "n_classes": self.n_classes,
                "output_mode": self.output_mode, "activation": self.activation}


@dataclass
class TrainConfig:
    learning_rate: float
    weight_decay: float = 0.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        return {"learning_rate": self.learning_rate,
                "weight_decay": self.weight_decay, "epochs": self.epochs,
                "batch_size": self.batch_size, "seed": self.seed}


def init_net(in_dim: int, width: int, n_blocks: int, n_classes: int,
             output_mode: str = MODE_SOFTMAX, activation: str = ACT_RELU,
             seed: int = 0) -> ResidualNet:
    """He-style scaled Gaussian weights, zero biases, all drawn from the
    (seed, "init", parameter-name) substreams."""
    if n_blocks < 1:
        raise ValueError("need at least one residual block")
    if output_mode not in (MODE_SOFTMAX, MODE_SIGMOID):
        raise ValueError(f"unknown output_mode {output_mode!r}")
    if activation not in (ACT_RELU, ACT_IDENTITY):
        raise ValueError(f"unknown activation {activation!r}")

    def affine(name: str, fan_in: int, fan_out: int) -> tuple[Parameter, Parameter]:
        gain = 2.0 if activation == ACT_RELU else 1.0
        w = substream(seed, "init", name).normal(
            0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out))
        return (Parameter.new(f"{name}.w", w),
                Parameter.new(f"{name}.b", np.zeros(fan_out)))

    stem_w, stem_b = affine("stem", in_dim, width)
    blocks = []
    for l in range(1, n_blocks + 1):
        w1, b1 = affine(f"block{l}.fc1", width, width)
        w2, b2 = affine(f"block{l}.fc2", width, width)
        blocks.append(ResidualBlock(w1=w1, b1=b1, w2=w2, b2=b2, index=l))
    head_w, head_b = affine("head", width, n_classes)
    return ResidualNet(stem_w=stem_w, stem_b=stem_b, blocks=blocks,
                       head_w=head_w, head_b=head_b,
                       output_mode=output_mode, activation=activation)


def _activate(net: ResidualNet, pre: np.ndarray) -> np.ndarray:
    if net.activation == ACT_RELU:
        return np.maximum(pre, 0.0)
    return pre


def _activate_grad(net: ResidualNet, pre: np.ndarray) -> np.ndarray:
    if net.activation == ACT_RELU:
        return (pre > 0.0).astype(np.float64)
    return np.ones_like(pre)


def _block_mask_vector(masks: MaskSample, block: ResidualBlock,
                       width: int) -> np.ndarray:
    """Per-unit multiplier (mask times rescale) for unit/block drop."""
    m = masks.per_block[block.index]
    if masks.kind == KIND_UNIT:
        if m.shape[-1] != width:
            raise ShapeMismatchError(
                f"block {block.index}: unit mask length {m.shape[-1]} != width {width}",
                block_index=block.index)
        return m / masks.keep_prob
    unit = expand_span_mask(m, masks.block_size, width)
    kept = unit.sum()
    if kept == 0:
        raise ValueError(f"block {block.index}: all spans dropped")
    return unit * (width / kept)


def _forward_cached(net: ResidualNet, x: np.ndarray,
                    masks: MaskSample | None = None,
                    scale_spec: StochasticSpec | None = None):
    """Forward pass keeping every intermediate needed by the backward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeMismatchError(
            f"stem expects input width {net.in_dim}, got shape {x.shape}")
    batch = x.shape[0]
    if masks is not None:
        for l in masks.per_block:
            if not 1 <= l <= net.n_blocks:
                raise ShapeMismatchError(
                    f"mask refers to block {l} outside [1..{net.n_blocks}]",
                    block_index=l)
        if masks.kind == KIND_PATH:
            for l, m in masks.per_block.items():
                if m.shape[0] != batch:
                    raise ShapeMismatchError(
                        f"block {l}: path mask has {m.shape[0]} rows, batch is {batch}",
                        block_index=l)

    cache = {"x": x, "blocks": []}
    h = x @ net.stem_w.value + net.stem_b.value
    cache["stem_out"] = h
    for blk in net.blocks:
        c = {"in": h}
        pre = h @ blk.w1.value + blk.b1.value
        act = _activate(net, pre)
        unit_mult = None
        if masks is not None and masks.kind in (KIND_UNIT, KIND_BLOCK) \
                and blk.index in masks.per_block:
            unit_mult = _block_mask_vector(masks, blk, net.width)
            hidden = act * unit_mult
        else:
            hidden = act
        branch = hidden @ blk.w2.value + blk.b2.value
        if masks is not None and masks.kind == KIND_PATH \
                and blk.index in masks.per_block:
            row_mult = masks.per_block[blk.index].reshape(-1, 1) / masks.keep_prob
            out = h + row_mult * branch
        elif scale_spec is not None and blk.index in scale_spec.adapted_blocks:
            row_mult = None
            out = apply_deterministic_scaled(branch, h, scale_spec.keep_prob)
            c["scale"] = scale_spec.keep_prob
        else:
            row_mult = None
            out = h + branch
        c.update(pre=pre, act=act, unit_mult=unit_mult, hidden=hidden,
                 row_mult=row_mult)
        cache["blocks"].append(c)
        h = out
    logits = h @ net.head_w.value + net.head_b.value
    cache["head_in"] = h
    check_finite(logits, "logits")
    return logits, cache


def forward(net: ResidualNet, x: np.ndarray,
            masks: MaskSample | None = None,
            scale_spec: StochasticSpec | None = None) -> np.ndarray:
    """Compute logits of shape [batch, n_classes].

    With ``masks`` the corresponding stochastic mechanism is applied to each
    adapted block; with neither argument the pass is fully deterministic.
    ``scale_spec`` applies the deterministic scaled rule for path drop.
    """
    logits, _ = _forward_cached(net, x, masks=masks, scale_spec=scale_spec)
    return logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    pos = logits >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
    ez = np.exp(logits[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def l2_penalty(net: ResidualNet) -> float:
    """Sum of squared residual-branch weight matrices (biases, stem and
    head excluded; the penalty regularizes the branch weights only)."""
    return float(sum(np.sum(b.w1.value ** 2) + np.sum(b.w2.value ** 2)
                     for b in net.blocks))


def _task_loss(logits: np.ndarray, targets, output_mode: str) -> float:
    batch = logits.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    if output_mode == MODE_SOFTMAX:
        y = np.asarray(targets)
        if y.ndim != 1 or y.shape[0] != batch:
            raise ShapeMismatchError("softmax targets must be one label per row")
        if y.min() < 0 or y.max() >= logits.shape[1]:
            raise ValueError("class index out of range")
        z = logits - logits.max(axis=1, keepdims=True)
        logprob = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return float(-logprob[np.arange(batch), y].mean())
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeMismatchError("sigmoid targets must match logits shape")
    if ((y < 0) | (y > 1)).any():
        raise ValueError("sigmoid targets must be in [0, 1]")
    # per-element stable BCE, summed over classes, mean over batch
    z = logits
    bce = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(bce.sum(axis=1).mean())


def loss(logits: np.ndarray, targets, net: ResidualNet,
         weight_decay: float) -> float:
    """Task loss (cross-entropy or summed binary cross-entropy, mean over
    the batch) plus weight_decay times the branch-weight L2 penalty."""
    return _task_loss(logits, targets, net.output_mode) \
        + weight_decay * l2_penalty(net)


def _loss_and_grads(net: ResidualNet, x: np.ndarray, targets,
                    weight_decay: float,
                    masks: MaskSample | None = None) -> tuple[float, dict[str, np.ndarray]]:
    logits, cache = _forward_cached(net, x, masks=masks)
    batch = logits.shape[0]
    total = _task_loss(logits, targets, net.output_mode) \
        + weight_decay * l2_penalty(net)

    if net.output_mode == MODE_SOFTMAX:
        y = np.asarray(targets)
        probs = softmax(logits)
        dlogits = probs.copy()
        dlogits[np.arange(batch), y] -= 1.0
        dlogits /= batch
    else:
        y = np.asarray(targets, dtype=np.float64)
        dlogits = (sigmoid(logits) - y) / batch

    grads: dict[str, np.ndarray] = {}
    h = cache["head_in"]
    grads[net.head_w.id] = h.T @ dlogits
    grads[net.head_b.id] = dlogits.sum(axis=0)
    g = dlogits @ net.head_w.value.T

    for blk, c in zip(reversed(net.blocks), reversed(cache["blocks"])):
        if c["row_mult"] is not None:
            dbranch = g * c["row_mult"]
        elif "scale" in c:
            dbranch = g * c["scale"]
        else:
            dbranch = g
        grads[blk.w2.id] = c["hidden"].T @ dbranch
        grads[blk.b2.id] = dbranch.sum(axis=0)
        dhidden = dbranch @ blk.w2.value.T
        dact = dhidden * c["unit_mult"] if c["unit_mult"] is not None else dhidden
        dpre = dact * _activate_grad(net, c["pre"])
        grads[blk.w1.id] = c["in"].T @ dpre
        grads[blk.b1.id] = dpre.sum(axis=0)
        g = g + dpre @ blk.w1.value.T

    grads[net.stem_w.id] = cache["x"].T @ g
    grads[net.stem_b.id] = g.sum(axis=0)

    if weight_decay != 0.0:
        for blk in net.blocks:
            grads[blk.w1.id] = grads[blk.w1.id] + 2.0 * weight_decay * blk.w1.value
            grads[blk.w2.id] = grads[blk.w2.id] + 2.0 * weight_decay * blk.w2.value

    for p in net.parameters():
        check_finite(grads[p.id], f"grad of {p.id}")
    return total, grads


def backward(net: ResidualNet, x: np.ndarray, targets, weight_decay: float,
             masks: MaskSample | None = None) -> dict[str, np.ndarray]:
    """Fill every Parameter.grad with d(loss)/d(value) and return the same
    gradients keyed by parameter id.  Deterministic given masks and inputs."""
    _, grads = _loss_and_grads(net, x, targets, weight_decay, masks=masks)
    for p in net.parameters():
        p.grad[...] = grads[p.id]
    return grads


def sgd_step(net, grads: dict[str, np.ndarray], lr: float) -> None:
    """In-place update value <- value - lr * grad for every parameter."""
    for p in net.parameters():
        p.value -= lr * grads[p.id]


def train(net: ResidualNet, dataset: tuple[np.ndarray, np.ndarray],
          cfg: TrainConfig,
          stochastic: StochasticSpec | None = None) -> list[float]:
    """Minibatch SGD on the task loss plus L2 penalty.

    When ``stochastic`` is given, a fresh mask is sampled per minibatch from
    the (cfg.seed, "mask", epoch, batch) substream, so runs with identical
    seeds and configs are bit-identical.  Returns the per-epoch mean loss.
    """
    X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    spec = stochastic.with_mode(MODE_TRAINING) if stochastic is not None else None
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        batch_losses = []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            xb, yb = X[idx], y[idx]
            masks = None
            if spec is not None:
                rng = substream(cfg.seed, "mask", epoch, bi)
                masks = sample_mask(spec, net.width, xb.shape[0], rng)
            try:
                # divergence is detected explicitly below, so silence the
                # transient overflow warnings on the way there
                with np.errstate(over="ignore", invalid="ignore"):
                    value, grads = _loss_and_grads(net, xb, yb,
                                                   cfg.weight_decay,
                                                   masks=masks)
            except FloatingPointError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch} batch {bi}: {exc}") from exc
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"epoch {epoch} batch {bi}: loss is {value}")
            sgd_step(net, grads, cfg.learning_rate)
            batch_losses.append(value)
        trace.append(float(np.mean(batch_losses)))
    return trace


def save_checkpoint(net: ResidualNet, path: str | Path,
                    config_echo: dict | None = None) -> None:
    """Self-describing checkpoint: shapes first, then row-major parameter
    data, then the config echo."""
    payload = {
        "shapes": {p.id: list(p.value.shape) for p in net.parameters()},
        "data": {p.id: p.value.ravel(order="C").tolist()
                 for p in net.parameters()},
        "config": {"arch": net.arch(), **(config_echo or {})},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: str | Path) -> tuple[ResidualNet, dict]:
    payload = json.loads(Path(path).read_text())
    arch = payload["config"]["arch"]
    net = init_net(in_dim=arch["in_dim"], width=arch["width"],
                   n_blocks=arch["n_blocks"], n_classes=arch["n_classes"],
                   output_mode=arch["output_mode"],
                   activation=arch["activation"], seed=0)
    for p in net.parameters():
        shape = tuple(payload["shapes"][p.id])
        flat = np.asarray(payload["data"][p.id], dtype=np.float64)
        p.value[...] = flat.reshape(shape)
    return net, payload["config"]


def save_loss_trace(trace: list[float], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(trace):
            w.writerow([epoch, repr(float(value))])
