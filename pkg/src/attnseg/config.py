"""Training/model configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class TrainConfig:
    # optimisation
    epochs: int = 30
    batch_size: int = 40
    rho: float = 0.95
    epsilon: float = 1e-6
    seed: int = 0
    dev_fraction: float = 0.2
    # input
    k: int = 10
    max_len: int = 40
    emb_dim: int = 300
    train_embeddings: bool = False
    min_avg_segment: float = 0.0  # drop training docs with shorter mean segments; 0 disables
    # architecture
    encoder: str = "cnn"
    filter_sizes: tuple = (2, 3, 4, 5)
    n_filters: int = 200
    hidden: int = 600
    dense_hidden: int = 256
    attention: bool = True
    tie_context: bool = True
    init_scale: float = 0.08
    # regularisation
    input_dropout: float = 0.25
    recurrent_dropout: float = 0.25
    dense_dropout: float = 0.3

    def __post_init__(self):
        self.filter_sizes = tuple(int(h) for h in self.filter_sizes)

    def validate(self):
        for name in ("epochs", "batch_size", "k", "max_len", "emb_dim", "n_filters", "hidden", "dense_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        for name in ("input_dropout", "recurrent_dropout", "dense_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if not 0.0 < self.rho < 1.0 or self.epsilon <= 0:
            raise ConfigError(f"AdaDelta needs 0 < rho < 1 and epsilon > 0, got {self.rho}, {self.epsilon}")
        if not 0.0 < self.dev_fraction < 1.0:
            raise ConfigError(f"dev_fraction must lie in (0, 1), got {self.dev_fraction}")
        if self.encoder not in ("cnn", "meanbow"):
            raise ConfigError(f"encoder must be 'cnn' or 'meanbow', got {self.encoder!r}")
        if self.encoder == "cnn":
            if not self.filter_sizes:
                raise ConfigError("filter_sizes must not be empty")
            if max(self.filter_sizes) > self.max_len or min(self.filter_sizes) < 1:
                raise ConfigError(f"filter sizes {self.filter_sizes} must lie in [1, max_len={self.max_len}]")
        return self

    @property
    def sentence_dim(self):
        return len(self.filter_sizes) * self.n_filters if self.encoder == "cnn" else self.emb_dim

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["filter_sizes"] = list(self.filter_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)
