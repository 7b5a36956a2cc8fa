"""Central finite-difference checks for graph gradients.

Both checks probe random directions ``v`` and compare the analytic
directional derivative with ``(f(x + eps v) - f(x - eps v)) / (2 eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, NodeId


@dataclass
class CheckResult:
    name: str
    probes: int
    max_rel_err: float
    errors: list[float] = field(default_factory=list, repr=False)

    def passed(self, tol: float) -> bool:
        return self.probes > 0 and self.max_rel_err <= tol


def rel_err(a: float, b: float, floor: float = 1e-7) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _leaf_value(g: Graph, node: NodeId, feed: dict) -> np.ndarray:
    if node in feed:
        return np.asarray(feed[node], dtype=g.dtype)
    if g.op(node) == "param":
        return g.param_values[g._attrs[node.index]["name"]]
    raise ValueError(f"{node!r} is neither fed nor a parameter")


def _unit_directions(rng, shapes):
    vs = [rng.standard_normal(s) for s in shapes]
    norm = np.sqrt(sum(float(np.sum(v * v)) for v in vs))
    return [v / norm for v in vs]


def check_first_order(
    out: NodeId,
    wrt: Sequence[NodeId],
    feed: dict,
    probes: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
    name: str = "",
) -> CheckResult:
    """Compare ``<grad out, v>`` with a central difference along ``v``."""
    g = out.graph
    feed = dict(feed)
    grads = ad.grad(out, wrt)
    base = [_leaf_value(g, n, feed).copy() for n in wrt]
    vals = g.forward(grads, feed)
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(probes):
        vs = _unit_directions(rng, [b.shape for b in base])
        analytic = sum(float(np.sum(gv * v)) for gv, v in zip(vals, vs))
        f = []
        for sign in (1.0, -1.0):
            shifted = {n: b + sign * eps * v for n, b, v in zip(wrt, base, vs)}
            (val,) = g.forward([out], {**feed, **shifted})
            f.append(float(val))
        numeric = (f[0] - f[1]) / (2 * eps)
        errors.append(rel_err(analytic, numeric))
    return CheckResult(name, probes, max(errors, default=0.0), errors)


def check_second_order(
    out: NodeId,
    wrt: Sequence[NodeId],
    feed: dict,
    probes: int = 20,
    eps: float = 1e-5,
    seed: int = 0,
    name: str = "",
) -> CheckResult:
    """Compare Hessian-vector products from double backprop with differences of gradients.

    Checks ``w . H v`` against ``w . (grad(x + eps v) - grad(x - eps v)) / (2 eps)``.
    """
    g = out.graph
    feed = dict(feed)
    grads = ad.grad(out, wrt)
    dirs = [g.input(f"__hvp_dir_{name}_{i}_{len(g)}") for i in range(len(wrt))]
    inner = None
    for gr, d in zip(grads, dirs):
        term = ad.sum_(ad.mul(gr, d))
        inner = term if inner is None else inner + term
    hvp = ad.grad(inner, wrt)
    base = [_leaf_value(g, n, feed).copy() for n in wrt]
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(probes):
        vs = _unit_directions(rng, [b.shape for b in base])
        ws = _unit_directions(rng, [b.shape for b in base])
        hv = g.forward(hvp, {**feed, **dict(zip(dirs, vs))})
        analytic = sum(float(np.sum(h * w)) for h, w in zip(hv, ws))
        gs = []
        for sign in (1.0, -1.0):
            shifted = {n: b + sign * eps * v for n, b, v in zip(wrt, base, vs)}
            gs.append(g.forward(grads, {**feed, **shifted}))
        numeric = sum(
            float(np.sum((gp - gm) * w)) for gp, gm, w in zip(gs[0], gs[1], ws)
        ) / (2 * eps)
        errors.append(rel_err(analytic, numeric))
    return CheckResult(name, probes, max(errors, default=0.0), errors)


# --------------------------------------------------------------------------
# one small scalar test problem per differentiable op

OpCase = Callable[[np.random.Generator], tuple[NodeId, list[NodeId], dict]]


def _weighted(out: NodeId, rng, shape) -> NodeId:
    """Reduce ``out`` to a scalar with fixed random weights (exercises all entries)."""
    w = out.graph.const(rng.standard_normal(shape))
    return ad.sum_(ad.mul(out, w))


def _unary_case(build, shape=(3, 4), low=None):
    def case(rng):
        g = Graph()
        x = g.input("x")
        val = rng.standard_normal(shape)
        if low is not None:
            val = low + np.abs(val)
        return _weighted(build(x), rng, shape), [x], {x: val}

    return case


def _binary_case(build, sa=(3, 4), sb=(3, 4), positive_b=False, out_shape=None):
    def case(rng):
        g = Graph()
        a, b = g.input("a"), g.input("b")
        va, vb = rng.standard_normal(sa), rng.standard_normal(sb)
        if positive_b:
            vb = 0.5 + np.abs(vb)
        shape = out_shape or np.broadcast_shapes(sa, sb)
        return _weighted(build(a, b), rng, shape), [a, b], {a: va, b: vb}

    return case


def _conv_case(rng):
    g = Graph()
    x, k = g.input("x"), g.input("k")
    feed = {x: rng.standard_normal((2, 2, 3, 4, 4)), k: rng.standard_normal((3, 2, 3, 3, 3))}
    return _weighted(ad.conv3d(x, k), rng, (2, 3, 3, 4, 4)), [x, k], feed


def _wgrad_case(rng):
    g = Graph()
    x, h = g.input("x"), g.input("h")
    kref = g.const(np.zeros((3, 2, 3, 3, 3)))
    node = g._append("conv3d_wgrad", [x, h, kref])
    feed = {x: rng.standard_normal((2, 2, 2, 3, 3)), h: rng.standard_normal((2, 3, 2, 3, 3))}
    return _weighted(node, rng, (3, 2, 3, 3, 3)), [x, h], feed


def _video_case(build, shape, out_shape):
    def case(rng):
        g = Graph()
        x = g.input("x")
        return _weighted(build(x), rng, out_shape), [x], {x: rng.standard_normal(shape)}

    return case


def _sort_case(rng):
    g = Graph()
    x = g.input("x")
    return _weighted(ad.sort_rows(x), rng, (6, 3)), [x], {x: rng.standard_normal((6, 3))}


def _append_channel_case(rng):
    g = Graph()
    x, s = g.input("x"), g.input("s")
    feed = {x: rng.standard_normal((2, 3, 2, 2, 2)), s: np.array(rng.standard_normal())}
    return _weighted(ad.append_channel(x, s), rng, (2, 4, 2, 2, 2)), [x, s], feed


def _scalar_reduce_case(build):
    def case(rng):
        g = Graph()
        x = g.input("x")
        return build(x), [x], {x: rng.standard_normal((3, 4))}

    return case


def _internal_case(tag, shape, ref_shape, out_shape, **attrs):
    """Ops that normally appear only inside backward graphs."""

    def case(rng):
        g = Graph()
        x = g.input("x")
        ref = g.const(np.zeros(ref_shape))
        node = g._append(tag, [x, ref], **attrs)
        return _weighted(node, rng, out_shape), [x], {x: rng.standard_normal(shape)}

    return case


def _unsort_case(tag):
    def case(rng):
        g = Graph()
        x, h = g.input("x"), g.input("h")
        s = ad.sort_rows(x)
        node = g._append(tag, [h, s])
        feed = {x: rng.standard_normal((5, 2)), h: rng.standard_normal((5, 2))}
        return _weighted(node, rng, (5, 2)), [h], feed

    return case


OP_CASES: dict[str, OpCase] = {
    "add": _binary_case(ad.add, (3, 4), (4,)),
    "sub": _binary_case(ad.sub, (3, 4), (3, 1)),
    "mul": _binary_case(ad.mul, (3, 4), (1, 4)),
    "div": _binary_case(ad.div, (3, 4), (3, 4), positive_b=True),
    "scale": _unary_case(lambda x: ad.scale(x, -2.5)),
    "exp": _unary_case(ad.exp),
    "log": _unary_case(ad.log_, low=0.5),
    "sqrt": _unary_case(ad.sqrt, low=0.5),
    "recip_safe": _unary_case(ad.recip_safe, low=0.5),
    "pow": _unary_case(lambda x: ad.power(x, 3.0)),
    "abs": _unary_case(ad.abs_),
    "sigmoid": _unary_case(ad.sigmoid),
    "leaky_relu": _unary_case(lambda x: ad.leaky_relu(x, 0.2)),
    "clamp_min": _unary_case(lambda x: ad.clamp_min(x, 0.1)),
    "sum": _unary_case(lambda x: ad.square(ad.sum_(x, axes=1, keepdims=True)), shape=(3, 4)),
    "mean": _scalar_reduce_case(lambda x: ad.sum_(ad.square(ad.mean(ad.square(x), axes=0)))),
    "reshape": _video_case(lambda x: ad.square(ad.reshape(x, (4, 3))), (3, 4), (4, 3)),
    "matmul": _binary_case(ad.matmul, (3, 4), (4, 2), out_shape=(3, 2)),
    "transpose": _video_case(lambda x: ad.square(ad.transpose(x)), (3, 4), (4, 3)),
    "conv3d": _conv_case,
    "conv3d_wgrad": _wgrad_case,
    "avg_pool3d": _video_case(lambda x: ad.square(ad.avg_pool3d(x, (2, 2, 1))), (2, 2, 4, 4, 2), (2, 2, 2, 2, 2)),
    "upsample3d": _video_case(lambda x: ad.square(ad.upsample3d(x, (1, 2, 2))), (2, 2, 2, 2, 2), (2, 2, 2, 4, 4)),
    "sort0": _sort_case,
    "pad_channel": _append_channel_case,
    "crop_channel": _video_case(
        lambda x: x.graph._append("crop_channel", [x]), (2, 3, 1, 2, 2), (2, 2, 1, 2, 2)
    ),
    "flip_swap": _video_case(
        lambda x: x.graph._append("flip_swap", [x]), (3, 2, 3, 1, 3), (2, 3, 3, 1, 3)
    ),
    "broadcast_like": _internal_case("broadcast_like", (1, 4), (3, 4), (3, 4)),
    "sum_to_like": _internal_case("sum_to_like", (3, 4), (4,), (4,)),
    "expand": _internal_case("expand", (3,), (3, 4), (3, 4), axes=(1,), keepdims=False, mean=True),
    "reshape_like": _internal_case("reshape_like", (3, 4), (2, 6), (2, 6)),
    "unsort": _unsort_case("unsort"),
    "resort": _unsort_case("resort"),
}


def check_op(name: str, probes: int = 100, eps: float = 1e-5, seed: int = 0,
             second_order: bool = False) -> CheckResult:
    """Run the canned problem for op ``name`` through the first- or second-order check."""
    if name not in OP_CASES:
        raise KeyError(f"no gradient check case for op {name!r}")
    out, wrt, feed = OP_CASES[name](np.random.default_rng(seed))
    check = check_second_order if second_order else check_first_order
    return check(out, wrt, feed, probes=probes, eps=eps, seed=seed, name=name)


def check_network(role: str, base_channels: int = 4, batch: int = 3, probes: int = 100,
                  eps: float = 1e-5, seed: int = 0) -> CheckResult:
    """First-order check of a whole network at the first rung, w.r.t. all parameters and the input."""
    from .layers import build_discriminator, build_generator, discriminator_spec, generator_spec

    gspec = generator_spec(base_channels)
    rng = np.random.default_rng(seed)
    if role == "generator":
        g = build_generator(gspec, 0, seed=seed)
        x = g.inputs["z"]
        feed = {x: rng.standard_normal((batch, gspec.latent_dim))}
    elif role == "discriminator":
        g = build_discriminator(discriminator_spec(gspec), 0, seed=seed)
        x = g.inputs["x"]
        feed = {x: rng.standard_normal((batch, 3, *gspec.ladder[0]))}
    else:
        raise ValueError(f"role must be generator or discriminator, got {role!r}")
    out = g.outputs["out"]
    (val,) = g.forward([out], feed)
    scalar = _weighted(out, rng, val.shape)
    wrt = [x] + [g.params[n] for n in sorted(g.params)]
    return check_first_order(scalar, wrt, feed, probes=probes, eps=eps, seed=seed, name=role)
