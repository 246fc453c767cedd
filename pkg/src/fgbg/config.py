"""Run configuration: schema, defaults, file loading, CLI overrides.

Config files are flat key/value YAML; every field can also be overridden by a
CLI flag of the same name (see `cli`). Unknown keys are rejected rather than
silently ignored.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .exceptions import ConfigError


@dataclass(frozen=True)
class RunConfig:
    """All knobs of a run. Defaults reproduce the standard training recipe.

    alpha is the style-alignment blend weight (0.2 for natural-on-natural
    runs, 0.4 when backgrounds come from a painted-style source); lambda1
    weights the mask-agreement loss and lambda2 the attention background
    loss; fm_weight / p_weight weight feature matching and perceptual terms.
    """

    resolution: int = 32
    d_z: int = 100
    alpha: float = 0.2
    lambda1: float = 200.0
    lambda2: float = 50.0
    fm_weight: float = 10.0
    p_weight: float = 10.0
    lr: float = 0.0002
    beta1: float = 0.0
    beta2: float = 0.9
    seed: int = 0
    style_alignment_enabled: bool = True
    geometry_alignment_enabled: bool = True

    # artifact knobs (not part of the training recipe)
    batch_size: int = 8
    base_channels: int = 160
    min_channels: int = 16
    modifier_channels: int = 32
    d_channels: int = 4
    epsilon: float = 1e-5
    mask_threshold: float = 0.5
    bg_patch_fraction: float = 0.3
    checkpoint_every: int = 500
    deterministic: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        for name in ("lambda1", "lambda2", "fm_weight", "p_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.resolution < 8 or self.resolution & (self.resolution - 1):
            raise ConfigError(f"resolution must be a power of two >= 8, got {self.resolution}")
        if self.d_z < 1:
            raise ConfigError(f"d_z must be >= 1, got {self.d_z}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError(f"mask_threshold must be in (0, 1), got {self.mask_threshold}")
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def effective_alpha(self) -> float:
        """Blend weight actually applied; the style ablation forces it to 0."""
        return self.alpha if self.style_alignment_enabled else 0.0

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value):
    """Coerce a parsed YAML value to the field's declared type."""
    kind = _FIELD_TYPES[name]
    if kind == "bool":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "yes", "no", "1", "0"):
            return value.lower() in ("true", "yes", "1")
        raise ConfigError(f"field {name!r} expects a bool, got {value!r}")
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"field {name!r} expects an int, got {value!r}")
        out = float(value)
        if out != int(out):
            raise ConfigError(f"field {name!r} expects an int, got {value!r}")
        return int(out)
    if kind == "float":
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"field {name!r} expects a float, got {value!r}") from None
    return value


def config_from_dict(values: dict) -> RunConfig:
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    return RunConfig(**coerced)


def load_config(path: str | Path) -> RunConfig:
    """Load a RunConfig from a flat key/value YAML file.

    Missing fields take their documented defaults; out-of-range values raise
    ConfigError; a missing file raises FileNotFoundError.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file must be a flat key/value mapping: {path}")
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
