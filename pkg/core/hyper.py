# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/hyper.py

Main value network, hypernetwork, losses, safe-set metrics and training.

Main network:
  MLP over the robot state. The hypernetwork produces its whole parameter
  vector, laid out layer by layer as W (out × in, row-major) then b.

Hypernetwork:
  SDF image → conv/SELU stack → flatten → FC/SELU → FC(param_count).
  Only the hypernetwork has trainable weights; gradients reach them
  through the main network evaluated on the HJ state grid.

Training loop (per batch):
  normalized SDFs → params → V̂ on a state subset → (RW)MSE vs HJ labels
  → backward → Adam.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from core.config import TrainConfig
from core.dynamics import make_model
from core.errors import HyperError
from core.geom import SdfGrid
from core.logger import get_logger
from core.nn import SELU_ALPHA, SELU_LAMBDA, AdamState, Graph, Node, adam_step, lecun_normal, siren_uniform
from core.reach import StateGrid

logger = get_logger()

DEFAULT_HIDDEN = (32, 32, 32, 16, 16, 16, 8, 8, 8)
DEFAULT_SINE_LAYERS = 3

# Output layer of the main network starts near zero
OUTPUT_INIT_BOUND = 1e-3

# First-layer sine frequency; states are in meters and radians, a few units wide
FIRST_LAYER_OMEGA = 3.0

ACTIVATIONS = ("sine", "selu", "relu")


# =============================================================================
# Main network
# =============================================================================

@dataclass(frozen=True)
class MainNetSpec:
    input_dim: int
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    activations: tuple[str, ...] = ("sine",) * 3 + ("selu",) * 6
    output_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "activations", tuple(self.activations))
        if self.input_dim < 1 or self.output_dim != 1:
            raise HyperError(f"main network needs input_dim ≥ 1 and output_dim 1, got "
                             f"{self.input_dim}/{self.output_dim}")
        if len(self.activations) != len(self.hidden):
            raise HyperError(f"{len(self.hidden)} hidden layers but {len(self.activations)} activations")
        if any(a not in ACTIVATIONS for a in self.activations):
            raise HyperError(f"activations must be drawn from {ACTIVATIONS}, got {self.activations}")
        if any(h < 1 for h in self.hidden):
            raise HyperError(f"hidden widths must be positive, got {self.hidden}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) per dense layer, output layer last."""
        widths = (self.input_dim,) + self.hidden + (self.output_dim,)
        return [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden),
                "activations": list(self.activations), "output_dim": self.output_dim}

    @classmethod
    def from_dict(cls, data: dict) -> "MainNetSpec":
        return cls(int(data["input_dim"]), tuple(data["hidden"]), tuple(data["activations"]),
                   int(data.get("output_dim", 1)))


def default_main_spec(input_dim: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                      sine_layers: int = DEFAULT_SINE_LAYERS) -> MainNetSpec:
    """First sine_layers hidden layers sine, the rest SELU."""
    sine_layers = min(sine_layers, len(hidden))
    activations = ("sine",) * sine_layers + ("selu",) * (len(hidden) - sine_layers)
    return MainNetSpec(input_dim, tuple(hidden), activations)


def param_count(spec: MainNetSpec) -> int:
    """Σ over layers of in·out + out."""
    return sum(o * i + o for o, i in spec.layer_shapes())


def param_layout(spec: MainNetSpec) -> list[tuple[slice, slice, int, int]]:
    """(weight slice, bias slice, out, in) per layer in the canonical vector order."""
    layout = []
    offset = 0
    for out_dim, in_dim in spec.layer_shapes():
        w = slice(offset, offset + out_dim * in_dim)
        offset = w.stop
        b = slice(offset, offset + out_dim)
        offset = b.stop
        layout.append((w, b, out_dim, in_dim))
    return layout


def init_main_params(spec: MainNetSpec, rng: np.random.Generator) -> np.ndarray:
    """SIREN init for sine layers, LeCun normal for SELU/ReLU, small uniform output layer."""
    params = np.zeros(param_count(spec))
    activations = spec.activations + ("linear",)
    for index, ((w, b, out_dim, in_dim), act) in enumerate(zip(param_layout(spec), activations)):
        if act == "sine":
            first = index == 0
            params[w] = siren_uniform(rng, (out_dim * in_dim,), in_dim, first, FIRST_LAYER_OMEGA)
            params[b] = siren_uniform(rng, (out_dim,), in_dim, first, FIRST_LAYER_OMEGA)
        elif act == "linear":
            params[w] = rng.uniform(-OUTPUT_INIT_BOUND, OUTPUT_INIT_BOUND, size=out_dim * in_dim)
        else:
            params[w] = lecun_normal(rng, (out_dim * in_dim,), in_dim)
    return params


def _activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "sine":
        return np.sin(x)
    if name == "selu":
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    return np.maximum(x, 0.0)


def main_forward(spec: MainNetSpec, params: np.ndarray, states: np.ndarray) -> np.ndarray:
    """
    V̂ for a batch of states.

    params (P,) with states (S, n) → (S,)
    params (B, P) with states (S, n) or (B, S, n) → (B, S)
    """
    params = np.asarray(params, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    expected = param_count(spec)
    if params.shape[-1] != expected:
        raise HyperError(f"parameter vector has length {params.shape[-1]}, spec needs {expected}")
    if states.shape[-1] != spec.input_dim:
        raise HyperError(f"states have {states.shape[-1]} components, spec needs {spec.input_dim}")

    lead = params.shape[:-1]
    h = states
    activations = spec.activations + ("linear",)
    for (w, b, out_dim, in_dim), act in zip(param_layout(spec), activations):
        weight = params[..., w].reshape(lead + (out_dim, in_dim))
        bias = params[..., b].reshape(lead + (1,) * (1 if lead else 0) + (out_dim,))
        h = np.matmul(h, np.swapaxes(weight, -1, -2)) + bias
        if act != "linear":
            h = _activate(act, h)
    return h[..., 0]


def build_main_graph(g: Graph, spec: MainNetSpec, params: Node, states: Node, batched: bool) -> Node:
    """
    Main network on an existing graph.
    batched=False: params (P,), states (S, n) → (S, 1)
    batched=True:  params (B, P), states (S, n) → (B, S, 1)
    """
    h = states
    keep = 1 if batched else 0
    activations = spec.activations + ("linear",)
    for index, ((w, b, out_dim, in_dim), act) in enumerate(zip(param_layout(spec), activations)):
        weight = g.reshape(g.slice(params, w.start, w.stop), (out_dim, in_dim), keep=keep, name=f"main_w{index}")
        bias = g.slice(params, b.start, b.stop, name=f"main_b{index}")
        h = g.bias(g.dense(h, weight), bias)
        if act == "sine":
            h = g.sine(h)
        elif act == "selu":
            h = g.selu(h)
        elif act == "relu":
            h = g.relu(h)
    return h


class MainNetEvaluator:
    """
    V̂ and ∂V̂/∂x for one parameter vector, through the nn graph.
    Used by the MPC terminal constraint.
    """

    def __init__(self, spec: MainNetSpec, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (param_count(spec),):
            raise HyperError(f"parameter vector has shape {params.shape}, spec needs ({param_count(spec)},)")
        self.spec = spec
        self.params = params
        self.graph = Graph()
        self._x = self.graph.input("x", (None, spec.input_dim))
        self._p = self.graph.input("params", (param_count(spec),))
        self._out = build_main_graph(self.graph, spec, self._p, self._x, batched=False)

    def value(self, x: np.ndarray) -> float:
        return float(main_forward(self.spec, self.params, np.asarray(x)[None, :])[0])

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        (out,) = self.graph.forward({"x": np.asarray(x, dtype=np.float64)[None, :], "params": self.params},
                                    [self._out])
        grads = self.graph.backward(self._out, wrt=[self._x])
        return float(out[0, 0]), grads["x"][0]


# =============================================================================
# Hypernetwork
# =============================================================================

@dataclass(frozen=True)
class HyperNetSpec:
    """
    CNN backbone (channels, kernel, stride per conv, each followed by SELU),
    FC hidden widths (SELU) and the linear head of width param_count(main).
    """
    in_height: int
    in_width: int
    conv: tuple[tuple[int, int, int], ...] = ((8, 5, 2), (16, 3, 2), (32, 3, 2))
    fc_hidden: tuple[int, ...] = (512,)
    out_dim: int = 3601

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in layer) for layer in self.conv))
        object.__setattr__(self, "fc_hidden", tuple(int(v) for v in self.fc_hidden))
        h, w = self.in_height, self.in_width
        for channels, kernel, stride in self.conv:
            if channels < 1 or kernel < 1 or stride < 1:
                raise HyperError(f"invalid conv layer {(channels, kernel, stride)}")
            if h < kernel or w < kernel:
                raise HyperError(f"input {self.in_height}×{self.in_width} too small for the conv stack")
            h, w = (h - kernel) // stride + 1, (w - kernel) // stride + 1

    def feature_size(self) -> int:
        h, w, c = self.in_height, self.in_width, 1
        for channels, kernel, stride in self.conv:
            h, w, c = (h - kernel) // stride + 1, (w - kernel) // stride + 1, channels
        return h * w * c

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        """Trainable arrays in canonical (creation) order."""
        shapes: dict[str, tuple[int, ...]] = {}
        in_ch = 1
        for i, (channels, kernel, _) in enumerate(self.conv):
            shapes[f"conv{i}_w"] = (channels, in_ch, kernel, kernel)
            shapes[f"conv{i}_b"] = (channels,)
            in_ch = channels
        width = self.feature_size()
        for i, hidden in enumerate(self.fc_hidden):
            shapes[f"fc{i}_w"] = (hidden, width)
            shapes[f"fc{i}_b"] = (hidden,)
            width = hidden
        shapes["head_w"] = (self.out_dim, width)
        shapes["head_b"] = (self.out_dim,)
        return shapes

    def to_dict(self) -> dict:
        return {"in_height": self.in_height, "in_width": self.in_width,
                "conv": [list(c) for c in self.conv], "fc_hidden": list(self.fc_hidden),
                "out_dim": self.out_dim}

    @classmethod
    def from_dict(cls, data: dict) -> "HyperNetSpec":
        return cls(int(data["in_height"]), int(data["in_width"]),
                   tuple(tuple(c) for c in data["conv"]), tuple(data["fc_hidden"]), int(data["out_dim"]))


def build_hyper_graph(g: Graph, spec: HyperNetSpec, sdf: Node) -> Node:
    """Hypernetwork on an existing graph: sdf (B, 1, H, W) → params (B, out_dim)."""
    shapes = spec.weight_shapes()
    h = sdf
    for i, (_, _, stride) in enumerate(spec.conv):
        w = g.param(f"conv{i}_w", shapes[f"conv{i}_w"])
        b = g.param(f"conv{i}_b", shapes[f"conv{i}_b"])
        h = g.selu(g.bias(g.conv2d(h, w, stride=stride), b, axis=1))
    h = g.flatten(h)
    for i in range(len(spec.fc_hidden)):
        w = g.param(f"fc{i}_w", shapes[f"fc{i}_w"])
        b = g.param(f"fc{i}_b", shapes[f"fc{i}_b"])
        h = g.selu(g.bias(g.dense(h, w), b))
    w = g.param("head_w", shapes["head_w"])
    b = g.param("head_b", shapes["head_b"])
    return g.bias(g.dense(h, w), b, name="head")


def init_hyper_weights(spec: HyperNetSpec, main_spec: MainNetSpec, rng: np.random.Generator,
                       head_scale: float = 0.01) -> dict[str, np.ndarray]:
    """
    LeCun normal backbone with zero biases. The head bias is a SIREN-style
    main-network init and the head weights are scaled down, so the initial
    hypernetwork output is that init plus a small SDF-dependent term.
    """
    weights = {}
    for name, shape in spec.weight_shapes().items():
        if name == "head_b":
            weights[name] = init_main_params(main_spec, rng)
        elif name.endswith("_b"):
            weights[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            weights[name] = lecun_normal(rng, shape, fan_in)
            if name == "head_w":
                weights[name] *= head_scale
    return weights


@dataclass
class Checkpoint:
    """
    Trained hypernetwork plus everything needed to reuse it.
    r_robot is the radius of the training labels; planners must use the same one.
    """
    hyper_spec: HyperNetSpec
    main_spec: MainNetSpec
    weights: dict[str, np.ndarray]
    sdf_mean: float
    sdf_std: float
    resolution: float
    model_id: str
    state_grid: StateGrid
    seed: int
    train_config: dict = field(default_factory=dict)
    r_robot: float = 0.0

    @property
    def param_count(self) -> int:
        return param_count(self.main_spec)


def _normalized_input(ckpt: Checkpoint, values: np.ndarray) -> np.ndarray:
    return ((values - ckpt.sdf_mean) / ckpt.sdf_std)[:, None, :, :]


def _check_geometry(ckpt: Checkpoint, sdf: SdfGrid) -> None:
    spec = ckpt.hyper_spec
    if (sdf.height, sdf.width) != (spec.in_height, spec.in_width) or not math.isclose(
            sdf.resolution, ckpt.resolution, rel_tol=1e-9):
        raise HyperError(
            f"SDF geometry {sdf.width}×{sdf.height}@{sdf.resolution} does not match checkpoint "
            f"{spec.in_width}×{spec.in_height}@{ckpt.resolution}"
        )


def hyper_forward_batch(ckpt: Checkpoint, sdf_values: np.ndarray) -> np.ndarray:
    """Parameter vectors (B, P) for a stack of raw SDF images (B, H, W)."""
    g = Graph()
    sdf = g.input("sdf", (None, 1, ckpt.hyper_spec.in_height, ckpt.hyper_spec.in_width))
    out = build_hyper_graph(g, ckpt.hyper_spec, sdf)
    (params,) = g.forward({"sdf": _normalized_input(ckpt, np.asarray(sdf_values, dtype=np.float64)),
                           **ckpt.weights}, [out])
    return params


def hyper_forward(ckpt: Checkpoint, sdf: SdfGrid) -> np.ndarray:
    """Main-network parameter vector for one local SDF."""
    _check_geometry(ckpt, sdf)
    return hyper_forward_batch(ckpt, sdf.values[None, :, :])[0]


# =============================================================================
# Losses and metrics
# =============================================================================

def _check_pair(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise HyperError(f"prediction shape {pred.shape} does not match target shape {target.shape}")


def rwmse_weights(target: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """w = 1 + α·exp(−β·V²) from the true values."""
    return 1.0 + alpha * np.exp(-beta * target * target)


def rwmse(pred, target, alpha: float = 1000.0, beta: float = 10.0) -> float:
    """Mean over samples of the grid mean of w·(V − V̂)². A 1D input is one sample."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    if alpha < 0 or not beta > 0:
        raise HyperError(f"rwmse needs α ≥ 0 and β > 0, got α={alpha} β={beta}")
    diff = target - pred
    return float(np.mean(np.mean(rwmse_weights(target, alpha, beta) * (diff * diff), axis=-1)))


def mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    diff = target - pred
    return float(np.mean(np.mean(diff * diff, axis=-1)))


@dataclass
class Metrics:
    """
    Safe-set agreement with safe = value > 0.
    confusion rows = truth, columns = prediction, order (safe, unsafe):
        [[tp, fn],
         [fp, tn]]
    """
    iou: float
    confusion: np.ndarray
    loss: float | None = None

    @property
    def tp(self) -> int:
        return int(self.confusion[0, 0])

    @property
    def fn(self) -> int:
        return int(self.confusion[0, 1])

    @property
    def fp(self) -> int:
        return int(self.confusion[1, 0])

    @property
    def tn(self) -> int:
        return int(self.confusion[1, 1])


def confusion_matrix(pred, target) -> np.ndarray:
    pred = np.asarray(pred)
    target = np.asarray(target)
    _check_pair(pred, target)
    pred_safe = pred > 0
    true_safe = target > 0
    return np.array([
        [np.count_nonzero(true_safe & pred_safe), np.count_nonzero(true_safe & ~pred_safe)],
        [np.count_nonzero(~true_safe & pred_safe), np.count_nonzero(~true_safe & ~pred_safe)],
    ], dtype=np.int64)


def metrics_from_confusion(confusion: np.ndarray, loss: float | None = None) -> Metrics:
    tp, fn, fp = confusion[0, 0], confusion[0, 1], confusion[1, 0]
    union = tp + fn + fp
    iou = 1.0 if union == 0 else float(tp) / float(union)
    return Metrics(iou, confusion, loss)


def iou_and_confusion(pred, target) -> Metrics:
    """IoU of predicted vs true safe sets (1 when both are empty) and the confusion matrix."""
    return metrics_from_confusion(confusion_matrix(pred, target))


# =============================================================================
# Training
# =============================================================================

@dataclass
class LabeledSet:
    """
    In-memory training data.
    sdf:     (M, H, W) local SDF images
    labels:  (M, S) HJ values, S = grid.size in row-major node order
    r_robot: robot radius the labels were solved with
    """
    sdf: np.ndarray
    labels: np.ndarray
    grid: StateGrid
    model_id: str
    resolution: float
    r_robot: float = 0.0

    def __post_init__(self):
        if self.sdf.ndim != 3:
            raise HyperError(f"sdf stack must be (M, H, W), got {self.sdf.shape}")
        if self.labels.shape != (self.sdf.shape[0], self.grid.size):
            raise HyperError(
                f"labels shape {self.labels.shape} does not match {self.sdf.shape[0]} samples "
                f"× {self.grid.size} grid nodes"
            )

    @property
    def count(self) -> int:
        return self.sdf.shape[0]


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_iou: float
    tp: int
    fp: int
    fn: int
    tn: int
    seconds: float = 0.0

    CSV_FIELDS = ("epoch", "train_loss", "val_loss", "val_iou", "tp", "fp", "fn", "tn")

    def csv_row(self) -> list:
        return [self.epoch, f"{self.train_loss:.8g}", f"{self.val_loss:.8g}", f"{self.val_iou:.6f}",
                self.tp, self.fp, self.fn, self.tn]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochMetrics]
    first_batch_loss: float


def split_indices(count: int, seed: int, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """
    Seeded train/validation split. A single sample is used for both.
    """
    if count < 1:
        raise HyperError("dataset is empty")
    if count == 1:
        return np.array([0]), np.array([0])
    perm = np.random.default_rng(seed).permutation(count)
    n_val = min(count - 1, max(1, int(round(val_fraction * count))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _loss_weights(config: TrainConfig) -> tuple[float, float]:
    """(α, β) of the configured loss; mse is α = 0."""
    if config.loss == "mse":
        return 0.0, config.beta
    return config.alpha, config.beta


def build_training_graph(hyper_spec: HyperNetSpec, main_spec: MainNetSpec) -> tuple[Graph, Node]:
    """Full differentiable path SDF → params → V̂ → weighted loss."""
    g = Graph()
    sdf = g.input("sdf", (None, 1, hyper_spec.in_height, hyper_spec.in_width))
    states = g.input("states", (None, main_spec.input_dim))
    target = g.input("target", (None, None))
    weight = g.input("weight", (None, None))
    params = build_hyper_graph(g, hyper_spec, sdf)
    values = g.reshape(build_main_graph(g, main_spec, params, states, batched=True), (-1,), keep=1)
    diff = g.sub(target, values)
    per_sample = g.mean(g.mul(weight, g.square(diff)), axis=-1)
    loss = g.mean(per_sample, name="loss")
    return g, loss


def evaluate_labels(ckpt: Checkpoint, data: LabeledSet, indices: np.ndarray, alpha: float,
                    beta: float, batch: int = 8) -> Metrics:
    """Loss (α, β) and confusion summed over samples, on the full state grid."""
    states = data.grid.points()
    confusion = np.zeros((2, 2), dtype=np.int64)
    losses = []
    for start in range(0, len(indices), batch):
        chunk = indices[start:start + batch]
        params = hyper_forward_batch(ckpt, data.sdf[chunk])
        pred = main_forward(ckpt.main_spec, params, states)
        target = data.labels[chunk]
        losses.append(rwmse(pred, target, alpha, beta) * len(chunk))
        confusion += confusion_matrix(pred, target)
    loss = float(np.sum(losses) / max(len(indices), 1))
    return metrics_from_confusion(confusion, loss)


def train(data: LabeledSet, config: TrainConfig, init_seed: int | None = None,
          on_progress: Callable[[int, int], None] | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """
    Supervised hypernetwork training. Deterministic for a fixed config.seed.

    init_seed: seed for the weight init (defaults to config.seed); lets two
               runs with different losses share the same initialization.
    """
    config.validate()
    n = make_model(data.model_id).n
    if data.grid.ndim != n:
        raise HyperError(f"label grid has {data.grid.ndim} dims, {data.model_id} state has {n}")

    main_spec = default_main_spec(n, tuple(config.hidden), config.sine_layers)
    hyper_spec = HyperNetSpec(data.sdf.shape[1], data.sdf.shape[2],
                              tuple(tuple(c) for c in config.conv), tuple(config.fc_hidden),
                              param_count(main_spec))

    rng = np.random.default_rng(config.seed)
    init_rng = np.random.default_rng(config.seed if init_seed is None else init_seed)
    weights = init_hyper_weights(hyper_spec, main_spec, init_rng, config.head_scale)

    train_idx, val_idx = split_indices(data.count, config.seed, config.val_fraction)
    sdf_std = float(np.std(data.sdf[train_idx]))
    ckpt = Checkpoint(
        hyper_spec=hyper_spec, main_spec=main_spec, weights=weights,
        sdf_mean=float(np.mean(data.sdf[train_idx])), sdf_std=sdf_std if sdf_std > 0 else 1.0,
        resolution=data.resolution, model_id=data.model_id, state_grid=data.grid,
        seed=config.seed, train_config=config.to_dict(), r_robot=data.r_robot,
    )

    graph, loss_node = build_training_graph(hyper_spec, main_spec)
    param_nodes = graph.params()
    alpha, beta = _loss_weights(config)
    states_all = data.grid.points()
    n_states = len(states_all)
    n_subset = n_states if config.subsample >= 1.0 else max(1, int(math.ceil(config.subsample * n_states)))
    adam = AdamState(lr=config.lr)

    batches_per_epoch = int(math.ceil(len(train_idx) / config.batch))
    total_steps = config.epochs * batches_per_epoch
    history: list[EpochMetrics] = []
    first_batch_loss = float("nan")
    step = 0

    logger.info(f"train: samples={data.count} train={len(train_idx)} val={len(val_idx)} "
                f"params(main)={param_count(main_spec)} loss={config.loss} α={alpha} β={beta} "
                f"epochs={config.epochs} batch={config.batch} lr={config.lr}")

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(train_idx)
        epoch_losses = []
        for start in range(0, len(order), config.batch):
            chunk = order[start:start + config.batch]
            if n_subset < n_states:
                subset = np.sort(rng.choice(n_states, size=n_subset, replace=False))
            else:
                subset = np.arange(n_states)
            target = data.labels[chunk][:, subset].astype(np.float64)
            feeds = {
                "sdf": _normalized_input(ckpt, data.sdf[chunk]),
                "states": states_all[subset],
                "target": target,
                "weight": rwmse_weights(target, alpha, beta),
                **ckpt.weights,
            }
            (loss,) = graph.forward(feeds, [loss_node])
            grads = graph.backward(loss_node, wrt=param_nodes)
            ckpt.weights = adam_step(adam, ckpt.weights, grads)

            loss = float(loss)
            if not np.isfinite(loss):
                logger.error(f"train: non-finite loss at epoch {epoch}")
                raise HyperError(f"training diverged: loss {loss} at epoch {epoch}")
            if step == 0:
                first_batch_loss = loss
            epoch_losses.append(loss)
            step += 1
            if on_progress:
                on_progress(step, total_steps)

        val = evaluate_labels(ckpt, data, val_idx, alpha, beta)
        row = EpochMetrics(epoch, float(np.mean(epoch_losses)), val.loss, val.iou,
                           val.tp, val.fp, val.fn, val.tn, time.perf_counter() - started)
        history.append(row)
        logger.info(f"train: epoch {epoch}/{config.epochs} — train_loss={row.train_loss:.6g} "
                    f"val_loss={row.val_loss:.6g} val_iou={row.val_iou:.4f} ({row.seconds:.1f}s)")
        if on_epoch:
            on_epoch(row)

    return TrainResult(ckpt, history, first_batch_loss)


def evaluate(ckpt: Checkpoint, data: LabeledSet, split: str = "val") -> Metrics:
    """
    Metrics of a checkpoint on a dataset split ("train", "val" or "all"),
    reproducing the training split from the checkpoint seed.
    """
    if data.grid != ckpt.state_grid:
        raise HyperError("dataset state grid differs from the checkpoint's")
    val_fraction = float(ckpt.train_config.get("val_fraction", 0.2))
    train_idx, val_idx = split_indices(data.count, ckpt.seed, val_fraction)
    indices = {"train": train_idx, "val": val_idx, "all": np.arange(data.count)}.get(split)
    if indices is None:
        raise HyperError(f"unknown split '{split}' (expected train, val or all)")
    loss_name = ckpt.train_config.get("loss", "rwmse")
    alpha = 0.0 if loss_name == "mse" else float(ckpt.train_config.get("alpha", 1000.0))
    beta = float(ckpt.train_config.get("beta", 10.0))
    return evaluate_labels(ckpt, data, indices, alpha, beta)


def train_grid_search(data: LabeledSet, config: TrainConfig, alphas: list[float],
                      betas: list[float]) -> list[dict]:
    """Validation IoU for every (α, β) pair, all runs from the same init."""
    results = []
    for alpha in alphas:
        for beta in betas:
            run_config = config.replace(loss="rwmse", alpha=float(alpha), beta=float(beta))
            result = train(data, run_config)
            last = result.history[-1]
            results.append({"alpha": float(alpha), "beta": float(beta),
                            "val_iou": last.val_iou, "val_loss": last.val_loss})
            logger.info(f"train_grid_search: α={alpha} β={beta} — val_iou={last.val_iou:.4f}")
    return results
