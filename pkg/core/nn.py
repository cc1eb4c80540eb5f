# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

"""
core/nn.py

Minimal reverse-mode autodiff over a static graph, plus Adam.

- A Graph is built once (leaves + ops) and evaluated many times with
  different feeds. Nodes are created in topological order by construction.
- Every value is a float64 numpy array. Leaves are fed by name; "param"
  leaves only differ from "input" leaves in that Graph.params() lists them.
- Each op is a small class with forward(ctx, *values) / backward(ctx, grad),
  the ctx being the node itself (cached inputs live on it).
- Gradients accumulate by sum over fan-out; broadcast operands are reduced
  back to their own shape.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from core.errors import NnError
from core.logger import get_logger

logger = get_logger()

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

# SIREN frequency factor. Sine layers compute sin(Wx + b); ω₀ lives in the weights.
SIREN_OMEGA0 = 30.0


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to shape (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# =============================================================================
# Ops
# =============================================================================

class Op:
    """forward() returns the node value; backward() one gradient per parent."""
    name = "op"

    def forward(self, ctx, *xs):
        raise NotImplementedError

    def backward(self, ctx, grad):
        raise NotImplementedError


class Dense(Op):
    """x (..., in) · W(..., out, in)ᵀ; W may carry leading batch axes."""
    name = "dense"

    def forward(self, ctx, x, w):
        return np.matmul(x, np.swapaxes(w, -1, -2))

    def backward(self, ctx, grad):
        x, w = ctx.inputs
        gx = np.matmul(grad, w)
        gw = np.matmul(np.swapaxes(grad, -1, -2), x)
        return _unbroadcast(gx, x.shape), _unbroadcast(gw, w.shape)


class Bias(Op):
    """
    x + b along a channel axis.
    axis=-1: b is (..., C); one singleton axis per missing dim is inserted before C.
    axis=1:  b is (C,) broadcast over (B, C, H, W).
    """
    name = "bias"

    def __init__(self, axis: int):
        self.axis = axis

    def _expanded(self, x, b):
        if self.axis == 1:
            return b.reshape(b.shape + (1,) * (x.ndim - 2))
        missing = x.ndim - b.ndim
        return b.reshape(b.shape[:-1] + (1,) * missing + b.shape[-1:]) if missing > 0 else b

    def forward(self, ctx, x, b):
        return x + self._expanded(x, b)

    def backward(self, ctx, grad):
        x, b = ctx.inputs
        gb = _unbroadcast(grad, self._expanded(x, b).shape).reshape(b.shape)
        return grad, gb


class Conv2d(Op):
    """Valid cross-correlation. x (B, C, H, W), w (O, C, k, k)."""
    name = "conv2d"

    def __init__(self, stride: int):
        self.stride = stride

    def forward(self, ctx, x, w):
        if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ValueError(f"conv2d expects (B,C,H,W)·(O,C,k,k), got {x.shape} and {w.shape}")
        k_h, k_w = w.shape[2:]
        s = self.stride
        windows = sliding_window_view(x, (k_h, k_w), axis=(2, 3))[:, :, ::s, ::s]
        ctx.cache = windows
        return np.einsum("bchwij,ocij->bohw", windows, w, optimize=True)

    def backward(self, ctx, grad):
        x, w = ctx.inputs
        windows = ctx.cache
        s = self.stride
        k_h, k_w = w.shape[2:]
        out_h, out_w = grad.shape[2:]
        gw = np.einsum("bohw,bchwij->ocij", grad, windows, optimize=True)
        gx = np.zeros_like(x)
        for i in range(k_h):
            for j in range(k_w):
                gx[:, :, i:i + s * (out_h - 1) + 1:s, j:j + s * (out_w - 1) + 1:s] += \
                    np.einsum("bohw,oc->bchw", grad, w[:, :, i, j], optimize=True)
        return gx, gw


class Sine(Op):
    name = "sine"

    def forward(self, ctx, x):
        return np.sin(x)

    def backward(self, ctx, grad):
        return (grad * np.cos(ctx.inputs[0]),)


class Selu(Op):
    name = "selu"

    def forward(self, ctx, x):
        return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))

    def backward(self, ctx, grad):
        x = ctx.inputs[0]
        return (grad * SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0))),)


class Relu(Op):
    name = "relu"

    def forward(self, ctx, x):
        return np.maximum(x, 0.0)

    def backward(self, ctx, grad):
        return (grad * (ctx.inputs[0] > 0),)


class AvgPool2(Op):
    """2×2 average pooling with stride 2 over the last two axes (odd tails dropped)."""
    name = "avgpool2"

    def forward(self, ctx, x):
        h, w = x.shape[-2] // 2, x.shape[-1] // 2
        cropped = x[..., :2 * h, :2 * w]
        return cropped.reshape(x.shape[:-2] + (h, 2, w, 2)).mean(axis=(-3, -1))

    def backward(self, ctx, grad):
        x = ctx.inputs[0]
        gx = np.zeros_like(x)
        h, w = grad.shape[-2:]
        gx[..., :2 * h, :2 * w] = np.repeat(np.repeat(grad, 2, axis=-2), 2, axis=-1) * 0.25
        return (gx,)


class Reshape(Op):
    """Reshape keeping the first `keep` axes; flatten is Reshape(keep=1, (-1,))."""
    name = "reshape"

    def __init__(self, shape: tuple[int, ...], keep: int):
        self.shape = shape
        self.keep = keep

    def forward(self, ctx, x):
        return x.reshape(x.shape[:self.keep] + self.shape)

    def backward(self, ctx, grad):
        return (grad.reshape(ctx.inputs[0].shape),)


class Slice(Op):
    name = "slice"

    def __init__(self, start: int, stop: int):
        self.start = start
        self.stop = stop

    def forward(self, ctx, x):
        return x[..., self.start:self.stop]

    def backward(self, ctx, grad):
        gx = np.zeros_like(ctx.inputs[0])
        gx[..., self.start:self.stop] = grad
        return (gx,)


class Concat(Op):
    name = "concat"

    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, ctx, *xs):
        return np.concatenate(xs, axis=self.axis)

    def backward(self, ctx, grad):
        sizes = [x.shape[self.axis] for x in ctx.inputs]
        return tuple(np.split(grad, np.cumsum(sizes)[:-1], axis=self.axis))


class Add(Op):
    name = "add"

    def forward(self, ctx, a, b):
        return a + b

    def backward(self, ctx, grad):
        a, b = ctx.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)


class Sub(Op):
    name = "sub"

    def forward(self, ctx, a, b):
        return a - b

    def backward(self, ctx, grad):
        a, b = ctx.inputs
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)


class Mul(Op):
    name = "mul"

    def forward(self, ctx, a, b):
        return a * b

    def backward(self, ctx, grad):
        a, b = ctx.inputs
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


class Scale(Op):
    name = "scale"

    def __init__(self, factor: float):
        self.factor = float(factor)

    def forward(self, ctx, x):
        return x * self.factor

    def backward(self, ctx, grad):
        return (grad * self.factor,)


class AddScalar(Op):
    name = "add_scalar"

    def __init__(self, offset: float):
        self.offset = float(offset)

    def forward(self, ctx, x):
        return x + self.offset

    def backward(self, ctx, grad):
        return (grad,)


class Square(Op):
    name = "square"

    def forward(self, ctx, x):
        return x * x

    def backward(self, ctx, grad):
        return (2.0 * grad * ctx.inputs[0],)


class Exp(Op):
    name = "exp"

    def forward(self, ctx, x):
        ctx.cache = np.exp(x)
        return ctx.cache

    def backward(self, ctx, grad):
        return (grad * ctx.cache,)


class Mean(Op):
    name = "mean"

    def __init__(self, axis: int | None):
        self.axis = axis

    def forward(self, ctx, x):
        return np.asarray(np.mean(x, axis=self.axis))

    def backward(self, ctx, grad):
        x = ctx.inputs[0]
        if self.axis is None:
            return (np.full_like(x, float(grad) / x.size),)
        count = x.shape[self.axis]
        return (np.broadcast_to(np.expand_dims(grad, self.axis), x.shape) / count,)


# =============================================================================
# Graph
# =============================================================================

class Node:
    """Graph vertex: a leaf (input/param/const) or an op applied to parents."""

    __slots__ = ("index", "kind", "name", "op", "parents", "shape", "value", "grad", "inputs", "cache")

    def __init__(self, index: int, kind: str, name: str, op: Op | None = None,
                 parents: tuple["Node", ...] = (), shape: tuple | None = None, value=None):
        self.index = index
        self.kind = kind
        self.name = name
        self.op = op
        self.parents = parents
        self.shape = shape
        self.value = value
        self.grad = None
        self.inputs = None
        self.cache = None

    def __repr__(self):
        return f"<Node {self.name} {self.kind}>"


class Graph:
    """
    Static computation graph.

        g = Graph()
        x = g.input("x", (None, 3))
        w = g.param("w", (4, 3))
        y = g.mean(g.square(g.dense(x, w)))
        (loss,) = g.forward({"x": xs, "w": ws}, [y])
        grads = g.backward(y)          # {"x": ..., "w": ...}
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._names: set[str] = set()
        self._forwarded = False

    # -- construction ---------------------------------------------------------

    def _add(self, kind: str, name: str | None, op: Op | None = None,
             parents: tuple[Node, ...] = (), shape=None, value=None) -> Node:
        name = name or f"{op.name if op else kind}_{len(self.nodes)}"
        if name in self._names:
            raise NnError(f"duplicate node name '{name}'")
        for parent in parents:
            if parent.index >= len(self.nodes) or self.nodes[parent.index] is not parent:
                raise NnError(f"node '{parent.name}' belongs to another graph")
        node = Node(len(self.nodes), kind, name, op, parents, shape, value)
        self.nodes.append(node)
        self._names.add(name)
        self._forwarded = False
        return node

    def input(self, name: str, shape: tuple | None = None) -> Node:
        """Data leaf. shape entries of None accept any size."""
        return self._add("input", name, shape=shape)

    def param(self, name: str, shape: tuple | None = None) -> Node:
        """Trainable leaf."""
        return self._add("param", name, shape=shape)

    def const(self, value, name: str | None = None) -> Node:
        return self._add("const", name, value=np.asarray(value, dtype=np.float64))

    def _op(self, op: Op, *parents: Node, name: str | None = None) -> Node:
        return self._add("op", name, op=op, parents=parents)

    def dense(self, x, w, name=None):
        return self._op(Dense(), x, w, name=name)

    def bias(self, x, b, axis: int = -1, name=None):
        if axis not in (-1, 1):
            raise NnError(f"bias axis must be -1 or 1, got {axis}")
        return self._op(Bias(axis), x, b, name=name)

    def conv2d(self, x, w, stride: int = 1, name=None):
        if stride < 1:
            raise NnError(f"conv2d stride must be ≥ 1, got {stride}")
        return self._op(Conv2d(stride), x, w, name=name)

    def sine(self, x, name=None):
        return self._op(Sine(), x, name=name)

    def selu(self, x, name=None):
        return self._op(Selu(), x, name=name)

    def relu(self, x, name=None):
        return self._op(Relu(), x, name=name)

    def avgpool2(self, x, name=None):
        return self._op(AvgPool2(), x, name=name)

    def flatten(self, x, name=None):
        """Flatten all but the leading (batch) axis."""
        return self._op(Reshape((-1,), keep=1), x, name=name)

    def reshape(self, x, shape: tuple[int, ...], keep: int = 0, name=None):
        return self._op(Reshape(tuple(shape), keep=keep), x, name=name)

    def slice(self, x, start: int, stop: int, name=None):
        """x[..., start:stop]"""
        return self._op(Slice(start, stop), x, name=name)

    def concat(self, xs: list[Node], axis: int = -1, name=None):
        return self._op(Concat(axis), *xs, name=name)

    def add(self, a, b, name=None):
        return self._op(Add(), a, b, name=name)

    def sub(self, a, b, name=None):
        return self._op(Sub(), a, b, name=name)

    def mul(self, a, b, name=None):
        return self._op(Mul(), a, b, name=name)

    def scale(self, x, factor: float, name=None):
        return self._op(Scale(factor), x, name=name)

    def add_scalar(self, x, offset: float, name=None):
        return self._op(AddScalar(offset), x, name=name)

    def square(self, x, name=None):
        return self._op(Square(), x, name=name)

    def exp(self, x, name=None):
        return self._op(Exp(), x, name=name)

    def mean(self, x, axis: int | None = None, name=None):
        return self._op(Mean(axis), x, name=name)

    # -- queries --------------------------------------------------------------

    def node(self, name: str) -> Node:
        for node in self.nodes:
            if node.name == name:
                return node
        raise NnError(f"no node named '{name}'")

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.kind in ("input", "param")]

    def params(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "param"]

    # -- evaluation -----------------------------------------------------------

    @staticmethod
    def _check_shape(node: Node, value: np.ndarray) -> None:
        if node.shape is None:
            return
        if value.ndim != len(node.shape) or any(
                want is not None and want != got for want, got in zip(node.shape, value.shape)):
            raise NnError(f"node '{node.name}': expected shape {node.shape}, got {value.shape}")

    def forward(self, feeds: dict[str, np.ndarray], outputs: list[Node] | None = None) -> list[np.ndarray]:
        """
        Evaluate every node in creation order.
        Returns the values of outputs (default: the last node).
        """
        for node in self.nodes:
            node.grad = None
            node.cache = None
            if node.kind in ("input", "param"):
                if node.name not in feeds:
                    raise NnError(f"node '{node.name}': no value fed")
                value = np.asarray(feeds[node.name], dtype=np.float64)
                self._check_shape(node, value)
                node.value = value
            elif node.kind == "op":
                node.inputs = tuple(p.value for p in node.parents)
                try:
                    node.value = np.asarray(node.op.forward(node, *node.inputs), dtype=np.float64)
                except ValueError as e:
                    shapes = ", ".join(str(v.shape) for v in node.inputs)
                    raise NnError(f"node '{node.name}' ({node.op.name}): shape mismatch {shapes} — {e}") from e

        self._forwarded = True
        outputs = outputs or [self.nodes[-1]]
        return [node.value for node in outputs]

    def backward(self, output: Node, grad=None, wrt: list[Node] | None = None) -> dict[str, np.ndarray]:
        """
        Reverse sweep from output. grad defaults to ones (scalar outputs: 1).
        Returns {leaf name: gradient} for wrt (default: every input/param leaf).
        """
        if not self._forwarded or output.value is None:
            raise NnError("backward called before forward")

        for node in self.nodes:
            node.grad = None
        seed = np.ones_like(output.value) if grad is None else np.asarray(grad, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise NnError(f"output gradient shape {seed.shape} does not match '{output.name}' {output.value.shape}")
        output.grad = seed

        for node in reversed(self.nodes[:output.index + 1]):
            if node.grad is None or node.kind != "op":
                continue
            parent_grads = node.op.backward(node, node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if parent.kind == "const":
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

        wrt = wrt if wrt is not None else self.leaves()
        return {
            node.name: node.grad if node.grad is not None else np.zeros_like(node.value)
            for node in wrt
        }


# =============================================================================
# Optimizer
# =============================================================================

@dataclass
class AdamState:
    """Bias-corrected Adam; moments are created lazily per parameter name."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """One Adam update. Returns new parameter arrays; state is advanced in place."""
    state.step += 1
    t = state.step
    updated = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            raise NnError(f"adam_step: no gradient for parameter '{name}'")
        if g.shape != value.shape:
            raise NnError(f"adam_step: gradient shape {g.shape} does not match parameter '{name}' {value.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        updated[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name] = m
        state.v[name] = v
    return updated


# =============================================================================
# Initializers
# =============================================================================

def siren_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, first: bool,
                  omega0: float = SIREN_OMEGA0) -> np.ndarray:
    """
    SIREN init with ω₀ folded into the weights:
    first sine layer U(−ω₀/n, ω₀/n), later sine layers U(−√(6/n), √(6/n)).
    """
    bound = omega0 / fan_in if first else np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def lecun_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """N(0, 1/fan_in), the self-normalizing init for SELU layers."""
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)
