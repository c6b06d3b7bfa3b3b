"""Run configuration: flat ``key = value`` files overridden by command-line flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .losses import LossWeights
from .masks import MaskSpec
from .training import TrainConfig, default_net_config


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    variant: str = "dres"
    disc: str = "pggan"
    image_size: int = 32
    base_channels: int = 16
    disc_channels: int = 16
    num_residual: int = 4
    shared_depth: int = 3
    upsample: str = "iconv"
    encoder_norm: bool = False
    lambda1: float = 0.995
    lambda2: float = 0.0025
    lambda3: float = 0.0025
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    mask: str = "central_square:0.25:0"
    data: str = "textures:4096"
    holdout: int = 256
    seed: int = 0
    steps: int = 2000
    log_every: int = 50
    checkpoint_every: int = 500
    sample_every: int = 500
    out: str = "runs/default"

    def validate(self) -> "RunConfig":
        problems = []
        if self.variant not in ("res", "dres"):
            problems.append(f"variant must be res or dres, got {self.variant!r}")
        if self.disc not in ("global", "patch", "pggan", "none"):
            problems.append(f"disc must be global, patch, pggan or none, got {self.disc!r}")
        if self.upsample not in ("iconv", "tconv"):
            problems.append(f"upsample must be iconv or tconv, got {self.upsample!r}")
        if self.image_size < 32 or self.image_size % 32:
            problems.append(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if not 0 <= self.shared_depth <= 3:
            problems.append(f"shared_depth must be in 0..3, got {self.shared_depth}")
        for name in ("base_channels", "disc_channels", "num_residual", "batch_size", "log_every",
                     "checkpoint_every", "sample_every"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0 or self.holdout < 0:
            problems.append("steps and holdout must be >= 0")
        for name in ("lr_g", "lr_d", "eps"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("beta1 and beta2 must lie in [0, 1)")
        try:
            self.loss_weights()
        except ValueError as exc:
            problems.append(str(exc))
        try:
            self.mask_spec()
        except ValueError as exc:
            problems.append(f"mask: {exc}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return self

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def mask_spec(self) -> MaskSpec:
        return MaskSpec.parse(self.mask)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.loss_weights(), self.lr_g, self.lr_d, self.beta1, self.beta2, self.eps,
                           self.batch_size, self.mask_spec())

    def net_config(self) -> dict:
        cfg = default_net_config(self.variant, self.disc, self.image_size, 3, self.base_channels,
                                 self.disc_channels, self.num_residual, self.shared_depth, self.upsample,
                                 self.encoder_norm)
        if self.disc == "none":
            cfg["discriminator"] = None
        return cfg

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.dumps())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from None
    return raw


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key = value")
        if key not in _TYPES:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``; validated."""
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_config_text(text, str(path)))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return dataclasses.replace(RunConfig(), **values).validate()
