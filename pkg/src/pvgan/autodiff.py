"""Reverse-mode differentiation over an append-only computation graph.

A :class:`Graph` records operations as nodes; :func:`grad` appends the
backward pass as *more nodes*, so a gradient can itself be differentiated.
Gradient-penalty losses rely on exactly that.

Typical use::

    g = Graph()
    x = g.input("x")
    w = g.param("w", np.ones((3, 2)))
    loss = sum_(square(matmul(x, w)))
    (dw,) = grad(loss, [w])
    loss_val, dw_val = g.forward([loss, dw], feed={x: batch})

Leaves are inputs (bound per call through ``feed``), parameters (values held
by the graph under a name) and constants. Node values are recomputed on every
:meth:`Graph.forward` call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as tc

log = logging.getLogger(__name__)


class GraphError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class NodeId:
    """Handle to one node of one :class:`Graph`."""

    graph: "Graph"
    index: int

    def __repr__(self) -> str:
        return f"NodeId({self.index}:{self.graph.op(self)})"

    def __eq__(self, other):
        return isinstance(other, NodeId) and other.graph is self.graph and other.index == self.index

    def __hash__(self):
        return hash((id(self.graph), self.index))

    def _lift(self, other) -> "NodeId":
        return other if isinstance(other, NodeId) else self.graph.const(other)

    def __add__(self, other):
        return add(self, self._lift(other))

    def __radd__(self, other):
        return add(self._lift(other), self)

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self._lift(other), self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, p):
        return power(self, float(p))


# --------------------------------------------------------------------------
# op registry

Thunk = Callable[[], "NodeId"]


@dataclass(frozen=True)
class _Op:
    forward: Callable
    backward: Callable | None  # None => derivative is zero almost everywhere
    shape_only: tuple[int, ...] = ()  # input slots read for shape/aux only


OPS: dict[str, _Op] = {}


def _register(tag, forward, backward=None, shape_only=()):
    OPS[tag] = _Op(forward, backward, tuple(shape_only))


class Graph:
    """Append-only differentiable computation graph.

    ``precision`` (32 or 64) fixes the dtype of parameters, constants and
    fed inputs. A graph is single-owner and must not be mutated concurrently.
    """

    def __init__(self, precision: int = 64):
        if precision not in tc.DTYPES:
            raise ValueError(f"precision must be 32 or 64, got {precision}")
        self.precision = precision
        self.dtype = tc.DTYPES[precision]
        self._ops: list[str] = []
        self._inputs: list[tuple[int, ...]] = []
        self._attrs: list[dict] = []
        self._values: list[np.ndarray | None] = []
        self._aux: dict[int, object] = {}
        self.inputs: dict[str, NodeId] = {}
        self.params: dict[str, NodeId] = {}
        self.param_values: dict[str, np.ndarray] = {}
        self.outputs: dict[str, NodeId] = {}
        self.structural_zeros: set[int] = set()

    def __len__(self) -> int:
        return len(self._ops)

    # -- construction ------------------------------------------------------

    def _append(self, tag: str, inputs: Sequence[NodeId] = (), **attrs) -> NodeId:
        if tag not in OPS:
            raise GraphError(f"unknown op {tag!r}")
        for n in inputs:
            if n.graph is not self:
                raise GraphError(f"{tag}: input {n!r} belongs to another graph")
        self._ops.append(tag)
        self._inputs.append(tuple(n.index for n in inputs))
        self._attrs.append(attrs)
        self._values.append(None)
        return NodeId(self, len(self._ops) - 1)

    def input(self, name: str) -> NodeId:
        """Placeholder leaf bound through ``feed`` at forward time."""
        if name in self.inputs:
            return self.inputs[name]
        node = self._append("input", name=name)
        self.inputs[name] = node
        return node

    def param(self, name: str, value=None) -> NodeId:
        """Trainable leaf. Re-requesting an existing name returns the same node."""
        if name in self.params:
            return self.params[name]
        if value is None:
            raise GraphError(f"parameter {name!r} needs an initial value")
        node = self._append("param", name=name)
        self.params[name] = node
        self.param_values[name] = np.array(value, dtype=self.dtype)
        return node

    def const(self, value) -> NodeId:
        return self._append("const", value=np.array(value, dtype=self.dtype))

    def set_param(self, name: str, value) -> None:
        if name not in self.params:
            raise KeyError(name)
        old = self.param_values[name]
        value = np.array(value, dtype=self.dtype)
        if value.shape != old.shape:
            raise tc.ShapeError(f"parameter {name}: shape {value.shape} != {old.shape}")
        self.param_values[name] = value

    def op(self, node: NodeId) -> str:
        return self._ops[node.index]

    def node_inputs(self, node: NodeId) -> list[NodeId]:
        return [NodeId(self, i) for i in self._inputs[node.index]]

    def value(self, node: NodeId) -> np.ndarray | None:
        """Cached output from the most recent forward pass that computed it."""
        return self._values[node.index]

    def is_structural_zero(self, node: NodeId) -> bool:
        """True for gradients returned for a ``wrt`` node the output never reached."""
        return node.index in self.structural_zeros

    # -- evaluation --------------------------------------------------------

    def _ancestors(self, roots: Iterable[int]) -> set[int]:
        seen: set[int] = set()
        stack = list(roots)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self._inputs[i])
        return seen

    def forward(self, outputs: Sequence[NodeId], feed: dict | None = None) -> list[np.ndarray]:
        """Evaluate ``outputs``; ``feed`` maps input nodes (or names) to arrays.

        Parameter nodes may also appear in ``feed`` to override their stored
        value for this call only.
        """
        feed = self._normalize_feed(feed or {})
        needed = sorted(self._ancestors(n.index for n in outputs))
        for i in needed:
            tag = self._ops[i]
            if tag == "input":
                if i not in feed:
                    raise GraphError(f"unbound input {self._attrs[i]['name']!r}")
                self._values[i] = feed[i]
            elif tag == "param":
                self._values[i] = feed.get(i, self.param_values[self._attrs[i]["name"]])
            else:
                vals = [self._values[j] for j in self._inputs[i]]
                self._values[i] = OPS[tag].forward(self, i, vals, **self._attrs[i])
        return [self._values[n.index] for n in outputs]

    def _normalize_feed(self, feed: dict) -> dict[int, np.ndarray]:
        out = {}
        for key, val in feed.items():
            if isinstance(key, str):
                if key not in self.inputs:
                    raise GraphError(f"no input named {key!r}")
                key = self.inputs[key]
            if key.graph is not self:
                raise GraphError("feed key belongs to another graph")
            out[key.index] = np.asarray(val, dtype=self.dtype)
        return out


# --------------------------------------------------------------------------
# gradients


def grad(out: NodeId, wrt: Sequence[NodeId]) -> list[NodeId]:
    """Append nodes computing d(out)/d(wrt) and return them.

    ``out`` must evaluate to a single element (checked at forward time). The
    returned nodes are ordinary graph nodes, so ``grad`` may be applied to
    them again. A ``wrt`` node that ``out`` does not depend on gets a zero
    gradient flagged via :meth:`Graph.is_structural_zero`.
    """
    g = out.graph
    wrt = list(wrt)
    targets = {n.index for n in wrt}
    ancestors = g._ancestors([out.index])
    lo = min(targets) if targets else out.index
    descendants = set(targets)
    for i in range(lo, out.index + 1):
        if i in ancestors and any(j in descendants for j in g._inputs[i]):
            descendants.add(i)
    relevant = ancestors & descendants

    contributions: dict[int, list[NodeId]] = {out.index: [_append(g, "seed_ones", [out])]}
    adjoint: dict[int, NodeId] = {}
    for i in sorted(relevant, reverse=True):
        parts = contributions.get(i)
        if not parts:
            continue
        total = parts[0]
        for p in parts[1:]:
            total = add(total, p)
        adjoint[i] = total
        op = OPS[g._ops[i]]
        if op.backward is None:
            continue
        node = NodeId(g, i)
        ins = g.node_inputs(node)
        thunks = op.backward(node, ins, total, **g._attrs[i])
        for slot, (inp, thunk) in enumerate(zip(ins, thunks)):
            if thunk is None or slot in op.shape_only or inp.index not in relevant:
                continue
            contributions.setdefault(inp.index, []).append(thunk())

    result = []
    for n in wrt:
        if n.index in adjoint:
            result.append(adjoint[n.index])
        else:
            z = _append(g, "zeros_like", [n])
            g.structural_zeros.add(z.index)
            log.debug("grad: %r unreachable from %r; returning zeros", n, out)
            result.append(z)
    return result


def gradient_norm(y: NodeId, wrt: NodeId) -> NodeId:
    """L2 norm of the gradient of ``sum(y)`` with respect to ``wrt`` (differentiable)."""
    (gy,) = grad(sum_(y), [wrt])
    return sqrt(sum_(square(gy)))


# --------------------------------------------------------------------------
# op builders


def _append(g: Graph, tag: str, inputs: Sequence[NodeId], **attrs) -> NodeId:
    return g._append(tag, inputs, **attrs)


def _g(*nodes: NodeId) -> Graph:
    graph = nodes[0].graph
    for n in nodes[1:]:
        if n.graph is not graph:
            raise GraphError("nodes from different graphs")
    return graph


def add(a, b):
    return _append(_g(a, b), "add", [a, b])


def sub(a, b):
    return _append(_g(a, b), "sub", [a, b])


def mul(a, b):
    return _append(_g(a, b), "mul", [a, b])


def div(a, b):
    return _append(_g(a, b), "div", [a, b])


def scale(x, c: float):
    return _append(x.graph, "scale", [x], c=float(c))


def neg(x):
    return scale(x, -1.0)


def exp(x):
    return _append(x.graph, "exp", [x])


def log_(x):
    return _append(x.graph, "log", [x])


def sqrt(x):
    return _append(x.graph, "sqrt", [x])


def recip_safe(x):
    """1/x with 0 mapped to 0."""
    return _append(x.graph, "recip_safe", [x])


def power(x, p: float):
    if p == 1.0:
        return x
    return _append(x.graph, "pow", [x], p=float(p))


def square(x):
    return power(x, 2.0)


def abs_(x):
    return _append(x.graph, "abs", [x])


def sigmoid(x):
    return _append(x.graph, "sigmoid", [x])


def leaky_relu(x, slope: float = 0.2):
    return _append(x.graph, "leaky_relu", [x], slope=float(slope))


def clamp_min(x, c: float):
    return _append(x.graph, "clamp_min", [x], c=float(c))


def stop_gradient(x):
    return _append(x.graph, "stop_gradient", [x])


def sum_(x, axes=None, keepdims: bool = False):
    """Sum over ``axes``: None (all), an int tuple, or ``"rest"`` (all but axis 0)."""
    return _append(x.graph, "sum", [x], axes=_axes_attr(axes), keepdims=keepdims)


def mean(x, axes=None, keepdims: bool = False):
    return _append(x.graph, "mean", [x], axes=_axes_attr(axes), keepdims=keepdims)


_mean_node = mean


def reshape(x, shape):
    return _append(x.graph, "reshape", [x], shape=tuple(shape))


def matmul(a, b):
    return _append(_g(a, b), "matmul", [a, b])


def transpose(x):
    return _append(x.graph, "transpose", [x])


def dense(x, w, b=None):
    out = matmul(x, transpose(w))
    return out if b is None else add(out, b)


def conv3d(x, k, b=None):
    out = _append(_g(x, k), "conv3d", [x, k])
    if b is None:
        return out
    return add(out, reshape(b, (1, -1, 1, 1, 1)))


def avg_pool3d(x, factor):
    return _append(x.graph, "avg_pool3d", [x], factor=tuple(tc.Shape3d.parse(factor)))


def upsample3d(x, factor):
    return _append(x.graph, "upsample3d", [x], factor=tuple(tc.Shape3d.parse(factor)))


def sort_rows(x):
    """Sort along axis 0 (each column independently, stable)."""
    return _append(x.graph, "sort0", [x])


def append_channel(x, s):
    """Concatenate scalar ``s`` as one extra constant channel (axis 1) of ``x``."""
    padded = _append(x.graph, "pad_channel", [x])
    mask = _append(x.graph, "last_channel_mask", [padded])
    return add(padded, mul(s, mask))


def _axes_attr(axes):
    if axes is None or axes == "rest":
        return axes
    if isinstance(axes, int):
        return (axes,)
    return tuple(axes)


def _resolve_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if axes == "rest":
        return tuple(range(1, ndim))
    return tuple(a % ndim for a in axes)


# --------------------------------------------------------------------------
# forward kernels and backward rules


def _sum_to(x: np.ndarray, shape) -> np.ndarray:
    if x.shape == tuple(shape):
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1
    )
    return x.sum(axis=axes, keepdims=True).reshape(shape)


def _leaf_forward(graph, i, vals, **attrs):
    raise GraphError("leaf nodes are bound, not computed")


_register("input", _leaf_forward)
_register("param", _leaf_forward)
_register("const", lambda graph, i, vals, value: value)


def _seed_forward(graph, i, vals):
    (x,) = vals
    if x.size != 1:
        raise GraphError(f"grad: output must have a single element, got shape {x.shape}")
    return np.ones_like(x)


_register("seed_ones", _seed_forward, shape_only=(0,))
_register("zeros_like", lambda graph, i, vals: np.zeros_like(vals[0]), shape_only=(0,))
_register("stop_gradient", lambda graph, i, vals: vals[0])

# piecewise-constant derivative factors; zero derivative themselves
_register(
    "lrelu_mask",
    lambda graph, i, vals, slope: np.where(vals[0] >= 0, 1.0, slope).astype(vals[0].dtype),
)
_register("sign_mask", lambda graph, i, vals: np.where(vals[0] >= 0, 1.0, -1.0).astype(vals[0].dtype))
_register("step_mask", lambda graph, i, vals, c: (vals[0] >= c).astype(vals[0].dtype))


def _last_channel_mask(graph, i, vals):
    (x,) = vals
    m = np.zeros((1, x.shape[1]) + (1,) * (x.ndim - 2), dtype=x.dtype)
    m[0, -1] = 1
    return m


_register("last_channel_mask", _last_channel_mask, shape_only=(0,))


def _binary_bwd(rule):
    def backward(node, ins, gout):
        a, b = ins
        ga, gb = rule(node, a, b, gout)
        return [
            None if ga is None else (lambda: _append(a.graph, "sum_to_like", [ga(), a])),
            None if gb is None else (lambda: _append(b.graph, "sum_to_like", [gb(), b])),
        ]

    return backward


_register(
    "add",
    lambda graph, i, vals: vals[0] + vals[1],
    _binary_bwd(lambda n, a, b, g: (lambda: g, lambda: g)),
)
_register(
    "sub",
    lambda graph, i, vals: vals[0] - vals[1],
    _binary_bwd(lambda n, a, b, g: (lambda: g, lambda: neg(g))),
)
_register(
    "mul",
    lambda graph, i, vals: vals[0] * vals[1],
    _binary_bwd(lambda n, a, b, g: (lambda: mul(g, b), lambda: mul(g, a))),
)
_register(
    "div",
    lambda graph, i, vals: vals[0] / vals[1],
    _binary_bwd(lambda n, a, b, g: (lambda: div(g, b), lambda: neg(div(mul(g, n), b)))),
)
_register(
    "sum_to_like",
    lambda graph, i, vals: _sum_to(vals[0], vals[1].shape),
    lambda node, ins, g: [lambda: _append(g.graph, "broadcast_like", [g, ins[0]]), None],
    shape_only=(1,),
)
_register(
    "broadcast_like",
    lambda graph, i, vals: np.broadcast_to(vals[0], vals[1].shape).copy(),
    lambda node, ins, g: [lambda: _append(g.graph, "sum_to_like", [g, ins[0]]), None],
    shape_only=(1,),
)
_register(
    "scale",
    lambda graph, i, vals, c: vals[0] * c,
    lambda node, ins, g, c: [lambda: scale(g, c)],
)
_register(
    "exp",
    lambda graph, i, vals: np.exp(vals[0]),
    lambda node, ins, g: [lambda: mul(g, node)],
)
_register(
    "log",
    lambda graph, i, vals: np.log(vals[0]),
    lambda node, ins, g: [lambda: div(g, ins[0])],
)
_register(
    "sqrt",
    lambda graph, i, vals: np.sqrt(vals[0]),
    lambda node, ins, g: [lambda: scale(mul(g, recip_safe(node)), 0.5)],
)


def _recip_safe_fwd(graph, i, vals):
    (x,) = vals
    out = np.zeros_like(x)
    np.divide(1.0, x, out=out, where=x != 0)
    return out


_register(
    "recip_safe",
    _recip_safe_fwd,
    lambda node, ins, g: [lambda: neg(mul(g, square(node)))],
)


def _pow_bwd(node, ins, g, p):
    (x,) = ins
    if p == 2.0:
        return [lambda: scale(mul(g, x), 2.0)]
    return [lambda: scale(mul(g, power(x, p - 1.0)), p)]


_register("pow", lambda graph, i, vals, p: vals[0] ** p, _pow_bwd)
_register(
    "abs",
    lambda graph, i, vals: np.abs(vals[0]),
    lambda node, ins, g: [lambda: mul(g, _append(g.graph, "sign_mask", [ins[0]]))],
)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_register(
    "sigmoid",
    lambda graph, i, vals: _sigmoid(vals[0]),
    lambda node, ins, g: [lambda: mul(g, mul(node, 1.0 - node))],
)
_register(
    "leaky_relu",
    lambda graph, i, vals, slope: tc.leaky_relu(vals[0], slope),
    lambda node, ins, g, slope: [
        lambda: mul(g, _append(g.graph, "lrelu_mask", [ins[0]], slope=slope))
    ],
)
_register(
    "clamp_min",
    lambda graph, i, vals, c: np.maximum(vals[0], c),
    lambda node, ins, g, c: [lambda: mul(g, _append(g.graph, "step_mask", [ins[0]], c=c))],
)


def _reduce(fn):
    def forward(graph, i, vals, axes, keepdims):
        x = vals[0]
        return fn(x, axis=_resolve_axes(axes, x.ndim), keepdims=keepdims)

    return forward


def _count(x, axes):
    return int(np.prod([x.shape[a] for a in _resolve_axes(axes, x.ndim)], dtype=np.int64))


def _expand(graph, i, vals, axes, keepdims, mean):
    g, ref = vals
    if not keepdims:
        g = np.expand_dims(g, _resolve_axes(axes, ref.ndim))
    out = np.broadcast_to(g, ref.shape).copy()
    return out / _count(ref, axes) if mean else out


def _expand_bwd(node, ins, g, axes, keepdims, mean):
    reduce_ = _mean_node if mean else sum_
    return [lambda: reduce_(g, axes, keepdims), None]


_register(
    "sum",
    _reduce(np.sum),
    lambda node, ins, g, axes, keepdims: [
        lambda: _append(g.graph, "expand", [g, ins[0]], axes=axes, keepdims=keepdims, mean=False)
    ],
)
_register(
    "mean",
    _reduce(np.mean),
    lambda node, ins, g, axes, keepdims: [
        lambda: _append(g.graph, "expand", [g, ins[0]], axes=axes, keepdims=keepdims, mean=True)
    ],
)
_register("expand", _expand, _expand_bwd, shape_only=(1,))
_register(
    "reshape",
    lambda graph, i, vals, shape: vals[0].reshape(shape),
    lambda node, ins, g, shape: [lambda: _append(g.graph, "reshape_like", [g, ins[0]])],
)
_register(
    "reshape_like",
    lambda graph, i, vals: vals[0].reshape(vals[1].shape),
    lambda node, ins, g: [lambda: _append(g.graph, "reshape_like", [g, ins[0]]), None],
    shape_only=(1,),
)


def _matmul_fwd(graph, i, vals):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise tc.ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


_register(
    "matmul",
    _matmul_fwd,
    lambda node, ins, g: [
        lambda: matmul(g, transpose(ins[1])),
        lambda: matmul(transpose(ins[0]), g),
    ],
)
_register(
    "transpose",
    lambda graph, i, vals: np.ascontiguousarray(vals[0].T),
    lambda node, ins, g: [lambda: transpose(g)],
)


def _flip_swap(k):
    return _append(k.graph, "flip_swap", [k])


_register(
    "conv3d",
    lambda graph, i, vals: tc.conv3d(vals[0], vals[1]),
    lambda node, ins, g: [
        lambda: _append(g.graph, "conv3d", [g, _flip_swap(ins[1])]),
        lambda: _append(g.graph, "conv3d_wgrad", [ins[0], g, ins[1]]),
    ],
)
_register(
    "flip_swap",
    lambda graph, i, vals: tc.flip_swap_kernel(vals[0]),
    lambda node, ins, g: [lambda: _flip_swap(g)],
)
_register(
    "conv3d_wgrad",
    lambda graph, i, vals: tc.conv3d_weight_grad(vals[0], vals[1], vals[2].shape[2:]),
    lambda node, ins, h: [
        lambda: _append(h.graph, "conv3d", [ins[1], _flip_swap(h)]),
        lambda: _append(h.graph, "conv3d", [ins[0], h]),
        None,
    ],
    shape_only=(2,),
)
_register(
    "avg_pool3d",
    lambda graph, i, vals, factor: tc.avg_pool3d(vals[0], factor),
    lambda node, ins, g, factor: [lambda: scale(upsample3d(g, factor), 1.0 / np.prod(factor))],
)
_register(
    "upsample3d",
    lambda graph, i, vals, factor: tc.upsample_nearest3d(vals[0], factor),
    lambda node, ins, g, factor: [lambda: scale(avg_pool3d(g, factor), float(np.prod(factor)))],
)


def _sort0_fwd(graph, i, vals):
    (x,) = vals
    perm = np.argsort(x, axis=0, kind="stable")
    graph._aux[i] = perm
    return np.take_along_axis(x, perm, axis=0)


def _unsort_fwd(graph, i, vals):
    g, _ = vals
    perm = graph._aux[graph._inputs[i][1]]
    out = np.empty_like(g)
    np.put_along_axis(out, perm, g, axis=0)
    return out


def _resort_fwd(graph, i, vals):
    g, _ = vals
    return np.take_along_axis(g, graph._aux[graph._inputs[i][1]], axis=0)


_register(
    "sort0",
    _sort0_fwd,
    lambda node, ins, g: [lambda: _append(g.graph, "unsort", [g, node])],
)
_register(
    "unsort",
    _unsort_fwd,
    lambda node, ins, g: [lambda: _append(g.graph, "resort", [g, ins[1]]), None],
    shape_only=(1,),
)
_register(
    "resort",
    _resort_fwd,
    lambda node, ins, g: [lambda: _append(g.graph, "unsort", [g, ins[1]]), None],
    shape_only=(1,),
)


def _pad_channel(graph, i, vals):
    x = vals[0]
    pad = [(0, 0)] * x.ndim
    pad[1] = (0, 1)
    return np.pad(x, pad)


_register(
    "pad_channel",
    _pad_channel,
    lambda node, ins, g: [lambda: _append(g.graph, "crop_channel", [g])],
)
_register(
    "crop_channel",
    lambda graph, i, vals: np.ascontiguousarray(vals[0][:, :-1]),
    lambda node, ins, g: [lambda: _append(g.graph, "pad_channel", [g])],
)

DIFFERENTIABLE_OPS = sorted(tag for tag, op in OPS.items() if op.backward is not None)
