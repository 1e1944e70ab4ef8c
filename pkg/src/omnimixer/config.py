"""Hyperparameter records and their JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    """Generator, discriminator and geometry hyperparameters (desk-scale defaults)."""

    image_height: int = 64
    blocks: int = 5
    base_patch: int = 16
    widths: list[int] = field(default_factory=lambda: [128, 64, 32, 16, 8])
    z_dim: int = 64
    num_classes: int = 24
    class_names: list[str] = field(default_factory=list)
    final_activation: str = "tanh"
    layers_per_block: int = 4
    kernel_size: int = 3
    vertical_padding: str = "replicate"
    token_hidden: int = 0  # 0 -> token count of the block
    channel_ratio: float = 2.0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    disc_width: int = 192
    disc_layers: int = 4
    disc_patch: int = 16
    snapshot_fov: float = 90.0
    snapshot_size: int = 64
    view_fov: float = 90.0
    view_size: int = 64

    @property
    def image_width(self) -> int:
        return 2 * self.image_height

    def validate(self) -> "ModelConfig":
        if self.blocks < 2:
            raise ConfigError(f"blocks must be >= 2, got {self.blocks}")
        if len(self.widths) != self.blocks:
            raise ConfigError(f"widths has {len(self.widths)} entries for {self.blocks} blocks")
        if self.base_patch != 2 ** (self.blocks - 1):
            raise ConfigError(
                f"base_patch must equal 2**(blocks-1) = {2 ** (self.blocks - 1)}, got {self.base_patch}"
            )
        if self.image_height % self.base_patch:
            raise ConfigError(f"image_height {self.image_height} not divisible by base_patch {self.base_patch}")
        if self.image_height % self.disc_patch:
            raise ConfigError(f"image_height {self.image_height} not divisible by disc_patch {self.disc_patch}")
        stages = self.disc_patch.bit_length() - 1
        if 2 ** stages != self.disc_patch or stages < 1:
            raise ConfigError(f"disc_patch must be a power of two >= 2, got {self.disc_patch}")
        if self.disc_width % 2 ** (stages - 1):
            raise ConfigError(f"disc_width {self.disc_width} cannot be halved {stages - 1} times")
        if self.final_activation not in ("tanh", "none"):
            raise ConfigError(f"final_activation must be 'tanh' or 'none', got {self.final_activation!r}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.class_names and len(self.class_names) != self.num_classes:
            raise ConfigError(f"{len(self.class_names)} class names for {self.num_classes} classes")
        if not 0 < self.snapshot_fov < 180 or not 0 < self.view_fov < 180:
            raise ConfigError("field of view must lie strictly between 0 and 180 degrees")
        return self


@dataclass
class LossWeights:
    lambda_ch_g: float = 0.1
    lambda_ch_d: float = 0.01
    gamma_r1: float = 10.0
    w_rec: float = 1.0
    w_dis_rec: float = 1.0

    def validate(self) -> "LossWeights":
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"loss weight {f.name} must be non-negative")
        return self


@dataclass
class Ablations:
    """Ablation switches; each one is independent of the others."""

    plain_bn: bool = False         # batch norm instead of conditional batch norm
    no_dis_rec: bool = False       # drop the discriminator reconstruction loss
    no_channel_loss: bool = False  # adversarial loss from the patch head only
    single_input: bool = False     # condition only enters block 1
    no_mixer_block1: bool = False  # block 1 uses depthwise layers


@dataclass
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 16
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    betas: list[float] = field(default_factory=lambda: [0.0, 0.99])
    adam_eps: float = 1e-8
    seed: int = 0
    roll_augment: bool = True
    checkpoint_every: int = 500
    sample_every: int = 500
    loss: LossWeights = field(default_factory=LossWeights)
    ablations: Ablations = field(default_factory=Ablations)

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        self.loss.validate()
        return self


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh)).validate()


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def apply_override(cfg: Config, assignment: str) -> None:
    """Apply ``section.key=value`` (value parsed as JSON, falling back to a string)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    target = cfg
    parts = path.strip().split(".")
    for p in parts[:-1]:
        if not hasattr(target, p) or not dataclasses.is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config section {p!r} in {path!r}")
        target = getattr(target, p)
    if parts[-1] not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigError(f"unknown config key {path!r}")
    setattr(target, parts[-1], value)
