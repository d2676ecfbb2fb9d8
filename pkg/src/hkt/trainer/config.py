from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace

from ..gradcore import ConfigError
from ..model import ModelConfig


@dataclass
class TrainConfig:
    """Optimisation settings plus the ablation switches applied to the model config.

    ``div_off`` / ``mono_off`` gate the optional level-weight regularisers;
    both are off unless explicitly enabled.
    """

    epochs: int = 15
    batch_size: int = 32
    peak_lr: float = 2e-3
    warmup_epochs: int = 2
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    seed: int = 0
    div_factor: float = 25.0
    final_div: float = 1e4
    eval_batch_size: int = 100
    # ablations
    no_hierarchy: bool = False
    beta_fixed: float | None = None
    alpha_uniform: bool = False
    div_off: bool = True
    mono_off: bool = True
    div_weight: float = 0.01
    mono_weight: float = 0.01
    # sensitivity grid
    sweep_levels: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    sweep_strides: list[int] = field(default_factory=lambda: [2, 3])

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must lie in [0, epochs), got {self.warmup_epochs}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.peak_lr <= 0:
            raise ConfigError(f"peak_lr must be > 0, got {self.peak_lr}")
        if self.beta_fixed is not None and not 0.0 <= self.beta_fixed <= 1.0:
            raise ConfigError(f"beta_fixed must lie in [0, 1], got {self.beta_fixed}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def apply_ablations(model_cfg: ModelConfig, cfg: TrainConfig) -> ModelConfig:
    """Model config with the train-level ablation switches folded in."""
    changes = {}
    if cfg.no_hierarchy:
        changes["n_levels"] = 1
        changes["lambda_fixed"] = None
    if cfg.beta_fixed is not None:
        changes["beta_fixed"] = cfg.beta_fixed
    if cfg.alpha_uniform:
        changes["alpha_uniform"] = True
    return replace(model_cfg, **changes) if changes else model_cfg
