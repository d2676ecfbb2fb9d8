from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from ..gradcore import ConfigError


@dataclass
class ModelConfig:
    """Hyperparameters of a hierarchical encoder.

    ``beta_fixed``, ``alpha_uniform`` and ``lambda_fixed`` pin the learned
    gates to constants; they implement the ablation rows and the reduction
    oracles (``beta_fixed=1`` with ``lambda_fixed=[1, 0, ...]`` is flat MHA).
    """

    d_model: int = 64
    n_heads: int = 4
    n_levels: int = 3
    stride: int = 2
    n_layers: int = 2
    conv_kernel: int = 3
    dropout: float = 0.0
    vocab_size: int = 17
    n_classes: int = 10
    causal: bool = False
    max_seq_len: int = 128
    ffn_mult: int = 4
    ln_eps: float = 1e-5
    beta_fixed: float | None = None
    alpha_uniform: bool = False
    lambda_fixed: list[float] | None = field(default=None)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_levels < 1:
            raise ConfigError(f"n_levels must be >= 1, got {self.n_levels}")
        if self.stride < 2:
            raise ConfigError(f"stride must be >= 2, got {self.stride}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.conv_kernel < 1:
            raise ConfigError(f"conv_kernel must be >= 1, got {self.conv_kernel}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.n_levels > 1 and self.max_seq_len < self.stride ** (self.n_levels - 1) + 1:
            raise ConfigError(
                f"max_seq_len={self.max_seq_len} too short for {self.n_levels} levels at stride "
                f"{self.stride}; need >= {self.stride ** (self.n_levels - 1) + 1}")
        if self.lambda_fixed is not None:
            lam = [float(v) for v in self.lambda_fixed]
            if len(lam) != self.n_levels or min(lam) < 0 or abs(sum(lam) - 1.0) > 1e-12:
                raise ConfigError(f"lambda_fixed must be a length-{self.n_levels} simplex vector")
            self.lambda_fixed = lam
        if self.beta_fixed is not None and not 0.0 <= self.beta_fixed <= 1.0:
            raise ConfigError(f"beta_fixed must lie in [0, 1], got {self.beta_fixed}")

    # derived sizes
    @property
    def key_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def level_dim(self, level: int) -> int:
        if level == 0:
            return self.d_model
        return max(self.d_model // 2 ** level, 32)

    def level_key_dim(self, level: int) -> int:
        return max(self.key_dim // 2 ** level, 16)

    def level_length(self, level: int, T: int | None = None) -> int:
        T = self.max_seq_len if T is None else T
        return T // self.stride ** level

    def level_lengths(self, T: int | None = None) -> list[int]:
        return [self.level_length(l, T) for l in range(self.n_levels)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
