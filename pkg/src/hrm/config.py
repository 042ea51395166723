"""Model and training hyperparameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any


class ConfigError(ValueError):
    """Raised for invalid or inconsistent hyperparameters."""


@dataclass
class ModelConfig:
    vocab_size: int = 11
    seq_len: int = 81
    hidden_dim: int = 128
    n_heads: int = 4
    blocks_per_module: int = 2
    expansion: float = 4.0
    # N high-level cycles of T low-level steps per segment
    N: int = 2
    T: int = 2
    M_max: int = 8
    epsilon_explore: float = 0.1
    use_stablemax: bool = False
    rms_eps: float = 1e-6
    rope_base: float = 10000.0
    lr: float = 1e-4
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    batch_size: int = 16
    seed: int = 0
    # extra free-form metadata (task name, token layout); never affects the math
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.n_heads

    @property
    def inner_dim(self) -> int:
        return max(1, int(round(self.expansion * self.hidden_dim)))

    def validate(self) -> None:
        counts = ("vocab_size", "seq_len", "hidden_dim", "n_heads", "blocks_per_module",
                  "N", "T", "M_max", "batch_size")
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.hidden_dim % (2 * self.n_heads):
            raise ConfigError(
                f"hidden_dim={self.hidden_dim} must be divisible by 2*n_heads={2 * self.n_heads}")
        if not 0.0 <= self.epsilon_explore <= 1.0:
            raise ConfigError("epsilon_explore must lie in [0, 1]")
        if self.epsilon_explore > 0 and self.M_max < 2:
            raise ConfigError("epsilon_explore > 0 requires M_max >= 2")
        if self.expansion <= 0 or self.rms_eps <= 0:
            raise ConfigError("expansion and rms_eps must be positive")
        if self.lr < 0 or self.weight_decay < 0 or self.warmup_steps < 0:
            raise ConfigError("lr, weight_decay and warmup_steps must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)
