"""Pixel normalization, minibatch standard deviation and the network builders.

Networks are described by a :class:`NetworkSpec`: a flat list of layer
descriptors grouped into blocks, one block per ladder rung. The shipped
generator spec follows the reference layer table of a 256x256x32 video
generator; the discriminator is its mirror image. ``base_channels`` scales
every channel count by ``base_channels / 128`` (minimum 2).

Parameter names are stable across rungs (``G/b2/conv1.w``, ``D/from_rgb3.b``),
so growing a network copies shared layers by name.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, NodeId
from .progressive import DEFAULT_LADDER, blend_node
from .rng import stream
from .tensor import Shape3d, ShapeError

LAYER_KINDS = (
    "dense", "conv3d", "upsample", "downsample", "pixelnorm",
    "minibatch_stddev", "to_rgb", "from_rgb", "leaky_relu",
)
FULL_CHANNELS = (128, 128, 128, 64, 32, 16, 8)
FULL_LATENT = 128
HEAD = -1  # block id of the per-rung to_rgb / from_rgb layers


# --------------------------------------------------------------------------
# numpy kernels


def pixel_norm(a: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Rescale the channel vector (axis 1) at every location to unit mean square."""
    return a / np.sqrt(np.mean(a * a, axis=1, keepdims=True) + eps)


def minibatch_stddev(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Append the batch-averaged feature standard deviation as one extra channel.

    Uses the population standard deviation over the batch axis, with ``eps``
    inside the square root, averaged over every (c, t, h, w).
    """
    # variance is shift invariant; shifting by one sample makes identical batches exactly 0
    std = np.sqrt(np.var(x - x[:1], axis=0) + eps)
    s = std.mean()
    extra = np.full((x.shape[0], 1) + x.shape[2:], s, dtype=x.dtype)
    return np.concatenate([x, extra], axis=1)


# --------------------------------------------------------------------------
# graph versions


def pixel_norm_node(a: NodeId, eps: float = 1e-8) -> NodeId:
    ms = ad.mean(ad.square(a), axes=1, keepdims=True)
    return ad.div(a, ad.sqrt(ms + eps))


def minibatch_stddev_node(x: NodeId, eps: float = 1e-8) -> NodeId:
    centered = x - ad.mean(x, axes=0, keepdims=True)
    std = ad.sqrt(ad.mean(ad.square(centered), axes=0) + eps)
    return ad.append_channel(x, ad.mean(std))


# --------------------------------------------------------------------------
# declarative spec


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    block: int
    channels: int | None = None  # output channels (conv/heads) or output width (dense)
    kernel: int | None = None
    factor: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class NetworkSpec:
    role: str  # "generator" or "discriminator"
    base_channels: int = 128
    latent_dim: int = FULL_LATENT
    image_channels: int = 3
    ladder: tuple[Shape3d, ...] = DEFAULT_LADDER
    slope: float = 0.2
    eps: float = 1e-8
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ("generator", "discriminator"):
            raise ValueError(f"role must be generator or discriminator, got {self.role!r}")
        self.ladder = tuple(Shape3d.parse(r) for r in self.ladder)

    # -- queries -----------------------------------------------------------

    def rung_index(self, rung) -> int:
        """Ladder position of ``rung``, given as a shape or directly as an index."""
        if isinstance(rung, (int, np.integer)):
            if not 0 <= rung < len(self.ladder):
                raise ShapeError(f"rung index {rung} outside ladder of length {len(self.ladder)}")
            return int(rung)
        rung = Shape3d.parse(rung)
        if rung not in self.ladder:
            raise ShapeError(f"rung {rung} is not on this network's ladder")
        return self.ladder.index(rung)

    def block_layers(self, block: int) -> list[LayerSpec]:
        return [l for l in self.layers if l.block == block]

    def block_channels(self, block: int) -> int:
        """Feature channels at the resolution of ``block`` (generator-side output)."""
        if self.role == "generator":
            convs = [l for l in self.block_layers(block) if l.kind == "conv3d"]
            return convs[-1].channels
        convs = [l for l in self.block_layers(block) if l.kind == "conv3d"]
        return convs[0].channels if block > 0 else convs[-1].channels

    # -- JSON --------------------------------------------------------------

    def to_json(self) -> str:
        d = asdict(self)
        d["ladder"] = [list(r) for r in self.ladder]
        d["layers"] = [{k: v for k, v in asdict(l).items() if v is not None} for l in self.layers]
        return json.dumps(d, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "NetworkSpec":
        d = json.loads(text)
        layers = [
            LayerSpec(**{**l, "factor": tuple(l["factor"]) if "factor" in l else None})
            for l in d.pop("layers")
        ]
        return cls(layers=layers, **d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_json(Path(path).read_text())


def scaled(channels: int, base_channels: int) -> int:
    return max(2, channels * base_channels // 128)


def generator_spec(
    base_channels: int = 128,
    ladder=DEFAULT_LADDER,
    channels=FULL_CHANNELS,
    latent_dim: int | None = None,
) -> NetworkSpec:
    """Generator: dense -> 4x4x4 block, then (upsample, conv, conv) per rung, to_rgb head."""
    ladder = tuple(Shape3d.parse(r) for r in ladder)
    if len(channels) < len(ladder):
        raise ValueError("need one channel count per rung")
    ch = [scaled(c, base_channels) for c in channels[: len(ladder)]]
    latent = latent_dim if latent_dim is not None else scaled(FULL_LATENT, base_channels)
    act = lambda b: LayerSpec("leaky_relu", b)
    layers = [
        LayerSpec("pixelnorm", 0),
        LayerSpec("dense", 0, channels=ch[0] * ladder[0].volume),
        act(0),
        LayerSpec("pixelnorm", 0),
        LayerSpec("conv3d", 0, channels=ch[0], kernel=3),
        act(0),
        LayerSpec("pixelnorm", 0),
    ]
    for k in range(1, len(ladder)):
        layers.append(LayerSpec("upsample", k, factor=tuple(ladder[k].ratio(ladder[k - 1]))))
        for _ in range(2):
            layers += [LayerSpec("conv3d", k, channels=ch[k], kernel=3), act(k), LayerSpec("pixelnorm", k)]
    layers += [LayerSpec("to_rgb", HEAD, channels=3, kernel=1), act(HEAD)]
    return NetworkSpec("generator", base_channels, latent, 3, ladder, layers=layers)


def discriminator_spec(gen: NetworkSpec) -> NetworkSpec:
    """Mirror image of a generator spec.

    Block k (k >= 1) mirrors generator block k: conv C_k -> C_k, conv
    C_k -> C_{k-1}, then downsample. Block 0 mirrors the generator stem:
    minibatch stddev, conv (C_0 + 1) -> C_0 and two linear dense layers.
    """
    n = len(gen.ladder)
    ch = [gen.block_channels(k) for k in range(n)]
    act = lambda b: LayerSpec("leaky_relu", b)
    layers = [LayerSpec("from_rgb", HEAD, channels=None, kernel=1), act(HEAD)]
    for k in range(n - 1, 0, -1):
        layers += [
            LayerSpec("conv3d", k, channels=ch[k], kernel=3), act(k),
            LayerSpec("conv3d", k, channels=ch[k - 1], kernel=3), act(k),
            LayerSpec("downsample", k, factor=tuple(gen.ladder[k].ratio(gen.ladder[k - 1]))),
        ]
    layers += [
        LayerSpec("minibatch_stddev", 0),
        LayerSpec("conv3d", 0, channels=ch[0], kernel=3), act(0),
        LayerSpec("dense", 0, channels=ch[0]),
        LayerSpec("dense", 0, channels=1),
    ]
    return replace(gen, role="discriminator", layers=layers)


# --------------------------------------------------------------------------
# concrete instantiation


@dataclass(frozen=True)
class ParamShape:
    name: str
    shape: tuple[int, ...]
    fan_in: int


def _generator_plan(spec: NetworkSpec, k_max: int):
    """Yield (layer, param_base_name, in_ch) in evaluation order for blocks 0..k_max."""
    plan = []
    ch = spec.latent_dim
    for k in range(k_max + 1):
        conv_i = 0
        for layer in spec.block_layers(k):
            name = None
            if layer.kind == "dense":
                name = f"G/b{k}/dense"
            elif layer.kind == "conv3d":
                name = f"G/b{k}/conv{conv_i}"
                conv_i += 1
            plan.append((layer, name, ch))
            if layer.kind == "dense":
                ch = layer.channels // spec.ladder[0].volume
            elif layer.kind == "conv3d":
                ch = layer.channels
    return plan


def param_shapes(spec: NetworkSpec, rung_index: int, transition: bool = False) -> list[ParamShape]:
    """Every parameter a network at ``rung_index`` uses, in creation order."""
    out = []

    def conv(name, cin, cout, kernel):
        out.append(ParamShape(f"{name}.w", (cout, cin, kernel, kernel, kernel), cin * kernel**3))
        out.append(ParamShape(f"{name}.b", (cout,), cin * kernel**3))

    def dense(name, n_in, n_out):
        out.append(ParamShape(f"{name}.w", (n_out, n_in), n_in))
        out.append(ParamShape(f"{name}.b", (n_out,), n_in))

    heads = [rung_index - 1, rung_index] if transition and rung_index > 0 else [rung_index]
    if spec.role == "generator":
        for layer, name, cin in _generator_plan(spec, rung_index):
            if layer.kind == "dense":
                dense(name, cin, layer.channels)
            elif layer.kind == "conv3d":
                conv(name, cin, layer.channels, layer.kernel)
        for r in heads:
            conv(f"G/to_rgb{r}", spec.block_channels(r), spec.image_channels, 1)
    else:
        for r in heads:
            conv(f"D/from_rgb{r}", spec.image_channels, spec.block_channels(r), 1)
        for layer, name, cin in _discriminator_plan(spec, rung_index):
            if layer.kind == "dense":
                dense(name, cin, layer.channels)
            elif layer.kind == "conv3d":
                conv(name, cin, layer.channels, layer.kernel)
    return out


def _discriminator_plan(spec: NetworkSpec, k_top: int):
    """(layer, param_base_name, input width) for blocks k_top..0, in evaluation order."""
    plan = []
    ch = spec.block_channels(k_top)
    for k in range(k_top, -1, -1):
        conv_i = dense_i = 0
        for layer in spec.block_layers(k):
            if layer.kind == "dense":
                n_in = ch * spec.ladder[0].volume if dense_i == 0 else ch
                plan.append((layer, f"D/b{k}/dense{dense_i}", n_in))
                dense_i += 1
                ch = layer.channels
                continue
            name = None
            if layer.kind == "conv3d":
                name = f"D/b{k}/conv{conv_i}"
                conv_i += 1
            plan.append((layer, name, ch))
            if layer.kind == "conv3d":
                ch = layer.channels
            elif layer.kind == "minibatch_stddev":
                ch += 1
    return plan


def count_parameters(spec: NetworkSpec, rung, transition: bool = False) -> int:
    k = spec.rung_index(rung)
    return sum(math.prod(p.shape) for p in param_shapes(spec, k, transition))


def init_params(spec: NetworkSpec, rung, seed: int = 0, transition: bool = False,
                existing: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """He-normal weights and zero biases; names in ``existing`` are copied instead.

    Each fresh parameter draws from its own named random stream, so the values
    do not depend on which other parameters exist.
    """
    k = spec.rung_index(rung)
    out = {}
    for p in param_shapes(spec, k, transition):
        if existing is not None and p.name in existing:
            if tuple(existing[p.name].shape) != p.shape:
                raise ShapeError(f"{p.name}: stored shape {existing[p.name].shape} != {p.shape}")
            out[p.name] = np.array(existing[p.name], copy=True)
        elif p.name.endswith(".b"):
            out[p.name] = np.zeros(p.shape)
        else:
            out[p.name] = stream(seed, "init", p.name).standard_normal(p.shape) * math.sqrt(2.0 / p.fan_in)
    return out


def _conv_layer(g: Graph, name: str, x: NodeId, params) -> NodeId:
    return ad.conv3d(x, g.param(f"{name}.w", params[f"{name}.w"]), g.param(f"{name}.b", params[f"{name}.b"]))


def _dense_layer(g: Graph, name: str, x: NodeId, params) -> NodeId:
    return ad.dense(x, g.param(f"{name}.w", params[f"{name}.w"]), g.param(f"{name}.b", params[f"{name}.b"]))


def _apply_simple(layer: LayerSpec, x: NodeId, spec: NetworkSpec) -> NodeId:
    if layer.kind == "leaky_relu":
        return ad.leaky_relu(x, spec.slope)
    if layer.kind == "pixelnorm":
        return pixel_norm_node(x, spec.eps)
    if layer.kind == "upsample":
        return ad.upsample3d(x, layer.factor)
    if layer.kind == "downsample":
        return ad.avg_pool3d(x, layer.factor)
    if layer.kind == "minibatch_stddev":
        return minibatch_stddev_node(x, spec.eps)
    raise ValueError(f"layer kind {layer.kind!r} needs parameters")


def _head(g: Graph, spec: NetworkSpec, kind: str, rung_index: int, x: NodeId, params) -> NodeId:
    prefix = "G/to_rgb" if kind == "to_rgb" else "D/from_rgb"
    x = _conv_layer(g, f"{prefix}{rung_index}", x, params)
    for layer in spec.block_layers(HEAD):
        if layer.kind == "leaky_relu":
            x = ad.leaky_relu(x, spec.slope)
    return x


def apply_generator(g: Graph, spec: NetworkSpec, rung_index: int, z: NodeId,
                    params: Mapping[str, np.ndarray], alpha: NodeId | None = None) -> NodeId:
    """Generator output video ``B x 3 x T x H x W`` at ladder rung ``rung_index``.

    With ``alpha`` (scalar node) the newest block is faded in:
    ``(1 - alpha) * upsample(to_rgb_prev(h)) + alpha * to_rgb(block(h))``.
    """
    if spec.role != "generator":
        raise ValueError("apply_generator needs a generator spec")
    x = z
    prev = None
    for layer, name, _ in _generator_plan(spec, rung_index):
        if layer.kind == "upsample" and layer.block == rung_index:
            prev = x
        if layer.kind == "dense":
            x = _dense_layer(g, name, x, params)
            x = ad.reshape(x, (-1, layer.channels // spec.ladder[0].volume, *spec.ladder[0]))
        elif layer.kind == "conv3d":
            x = _conv_layer(g, name, x, params)
        else:
            x = _apply_simple(layer, x, spec)
    high = _head(g, spec, "to_rgb", rung_index, x, params)
    if alpha is None or rung_index == 0:
        return high
    f = spec.ladder[rung_index].ratio(spec.ladder[rung_index - 1])
    low = ad.upsample3d(_head(g, spec, "to_rgb", rung_index - 1, prev, params), f)
    return blend_node(low, high, alpha)


def apply_discriminator(g: Graph, spec: NetworkSpec, rung_index: int, x: NodeId,
                        params: Mapping[str, np.ndarray], alpha: NodeId | None = None
                        ) -> tuple[NodeId, NodeId]:
    """Return ``(score B x 1, features B x C0)``; features feed the last dense layer.

    With ``alpha`` the input is also average-pooled to the previous rung and
    routed through that rung's from_rgb; the two paths are blended after the
    newest block.
    """
    if spec.role != "discriminator":
        raise ValueError("apply_discriminator needs a discriminator spec")
    h = _head(g, spec, "from_rgb", rung_index, x, params)
    features = None
    dense_seen = 0
    for layer, name, _ in _discriminator_plan(spec, rung_index):
        if layer.kind == "conv3d":
            h = _conv_layer(g, name, h, params)
        elif layer.kind == "dense":
            if dense_seen == 0:
                h = ad.reshape(h, (-1, _flat_width(spec, rung_index, name)))
            else:
                features = h
            h = _dense_layer(g, name, h, params)
            dense_seen += 1
        else:
            h = _apply_simple(layer, h, spec)
        if (alpha is not None and rung_index > 0 and layer.kind == "downsample"
                and layer.block == rung_index):
            low = _head(g, spec, "from_rgb", rung_index - 1, ad.avg_pool3d(x, layer.factor), params)
            h = blend_node(low, h, alpha)
    return h, features


def _flat_width(spec: NetworkSpec, rung_index: int, name: str) -> int:
    for layer, n, cin in _discriminator_plan(spec, rung_index):
        if n == name:
            return cin
    raise KeyError(name)


def build_generator(spec: NetworkSpec, rung, params=None, seed: int = 0,
                    precision: int = 64, transition: bool = False) -> Graph:
    """Graph from input ``z`` (B x latent_dim) to ``outputs["out"]`` at ``rung``.

    ``transition=True`` adds a scalar input ``alpha`` and the fade-in path.
    """
    k = spec.rung_index(rung)
    params = init_params(spec, rung, seed, transition, existing=params)
    g = Graph(precision)
    a = g.input("alpha") if transition and k > 0 else None
    g.outputs["out"] = apply_generator(g, spec, k, g.input("z"), params, a)
    return g


def build_discriminator(spec: NetworkSpec, rung, params=None, seed: int = 0,
                        precision: int = 64, transition: bool = False) -> Graph:
    """Graph from input ``x`` (B x 3 x rung) to ``outputs["out"]`` (B x 1) and ``outputs["features"]``."""
    k = spec.rung_index(rung)
    params = init_params(spec, rung, seed, transition, existing=params)
    g = Graph(precision)
    a = g.input("alpha") if transition and k > 0 else None
    out, feats = apply_discriminator(g, spec, k, g.input("x"), params, a)
    g.outputs["out"], g.outputs["features"] = out, feats
    return g


def grow_network(old: Graph, spec: NetworkSpec, new_rung, seed: int = 0) -> Graph:
    """Network at the successor rung, in fade-in mode, sharing ``old``'s parameters.

    Parameters present in ``old`` are copied bit-exactly; the new block and
    the new to_rgb/from_rgb head are freshly initialized.
    """
    build = build_generator if spec.role == "generator" else build_discriminator
    return build(spec, new_rung, params=old.param_values, seed=seed,
                 precision=old.precision, transition=True)


def graph_parameter_count(g: Graph) -> int:
    return sum(v.size for v in g.param_values.values())


# --------------------------------------------------------------------------
# small fully-connected networks for the 2-D toy problems


def mlp_param_shapes(prefix: str, sizes) -> list[ParamShape]:
    out = []
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        out.append(ParamShape(f"{prefix}/fc{i}.w", (n_out, n_in), n_in))
        out.append(ParamShape(f"{prefix}/fc{i}.b", (n_out,), n_in))
    return out


def init_mlp(prefix: str, sizes, seed: int = 0) -> dict[str, np.ndarray]:
    out = {}
    for p in mlp_param_shapes(prefix, sizes):
        if p.name.endswith(".b"):
            out[p.name] = np.zeros(p.shape)
        else:
            out[p.name] = stream(seed, "init", p.name).standard_normal(p.shape) * math.sqrt(2.0 / p.fan_in)
    return out


def apply_mlp(g: Graph, prefix: str, sizes, x: NodeId, params, slope: float = 0.2) -> NodeId:
    """Dense layers with leaky-ReLU between them; the last layer is linear."""
    n = len(sizes) - 1
    for i in range(n):
        x = _dense_layer(g, f"{prefix}/fc{i}", x, params)
        if i < n - 1:
            x = ad.leaky_relu(x, slope)
    return x
