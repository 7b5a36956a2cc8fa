"""Flat ``key = value`` training configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..losses import LOSS_KINDS, LossConfig
from ..progressive import DEFAULT_LADDER, GrowthSchedule
from ..tensor import Shape3d

DATASETS = ("gauss_mix_2d", "moving_dot_video")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # objective
    loss: str = "swgan"
    lambda1: float = 10.0
    lambda2: float = 10.0
    k_lipschitz: float = 1.0
    clip_bound: float = 0.01
    n_projections: int = 64
    y_hat_space: str = "encoding"
    theta_mode: str = "learned"
    # data
    dataset: str = "gauss_mix_2d"
    mixture_components: int = 4
    mixture_radius: float = 2.0
    mixture_std: float = 0.1
    dot_max_speed: int = 1
    # growth (video only)
    ladder: tuple[Shape3d, ...] = DEFAULT_LADDER[:3]
    images_per_phase: int = 2000
    images_per_transition: int = 0  # 0 => same as images_per_phase
    # networks
    base_channels: int = 4
    latent_dim: int = 0  # 0 => channel-scaled default (video) / 2 (2-D)
    hidden: int = 64
    encoder_dim: int = 8
    # optimization
    batch_size: tuple[int, ...] = (128,)
    step_size: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.99
    adam_eps: float = 1e-8
    n_critic: int = 1
    seed: int = 0
    precision: int = 32
    total_images: int = 64_000
    # reporting
    eval_every: int = 100
    eval_samples: int = 512
    eval_projections: int = 128
    checkpoint_every: int = 0
    checkpoint_dir: str = ""
    report_path: str = ""

    def __post_init__(self):
        self.ladder = tuple(Shape3d.parse(r) for r in self.ladder)
        self.batch_size = tuple(int(b) for b in self.batch_size)
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        positive = ["images_per_phase", "base_channels", "hidden", "encoder_dim", "n_critic",
                    "eval_samples", "eval_projections", "mixture_components", "n_projections"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("total_images", "eval_every", "checkpoint_every", "latent_dim",
                     "images_per_transition", "dot_max_speed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.batch_size or min(self.batch_size) < 1:
            raise ConfigError("batch_size entries must be positive")
        self.loss_config()
        self.schedule()

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(self.loss, self.lambda1, self.lambda2, self.k_lipschitz,
                              self.clip_bound, self.n_projections, self.y_hat_space, self.theta_mode)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def schedule(self) -> GrowthSchedule:
        try:
            return GrowthSchedule(self.ladder, self.images_per_phase, self.images_per_transition or None)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def progressive(self) -> bool:
        return self.dataset == "moving_dot_video"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ladder"] = [str(r) for r in self.ladder]
        d["batch_size"] = list(self.batch_size)
        return d

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _convert(f: dataclasses.Field, raw: str):
    name, kind = f.name, f.type
    try:
        if name == "ladder":
            return tuple(Shape3d.parse(p) for p in raw.replace(" ", "").split(","))
        if name == "batch_size":
            return tuple(int(p) for p in raw.replace(" ", "").split(","))
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_config(text: str) -> TrainConfig:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment, unknown keys are errors."""
    known = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(known[key], raw)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
