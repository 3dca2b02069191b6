"""Run configuration: defaults, TOML file, command-line overrides (flags win)."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .alignment import TrainConfig
from .attention_index import DEFAULT_MIN_PTS, K_SPANS, K_TUPLES
from .encoders import DEFAULT_DIM, EmbeddingProviderConfig
from .errors import ValidationError
from .pipeline import MatchOptions


@dataclass
class RunConfig:
    # training
    lam: float = 0.025
    epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    patience: int = 3
    hinge_margin: float | None = None
    seed: int = 0
    # representation
    provider: str = "hash"
    dim: int = DEFAULT_DIM
    # index and matching
    eps: float | None = None
    min_pts: int = DEFAULT_MIN_PTS
    k_spans: int = K_SPANS
    k_tuples: int = K_TUPLES
    top_k: int | None = None
    use_attention: bool = True
    use_visual: bool = True
    threads: int | None = None
    paths: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        self.train_config()
        self.match_options()
        self.provider_config()
        if self.eps is not None and self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.min_pts < 1:
            raise ValidationError("min_pts must be at least 1")
        if self.threads is not None and self.threads < 1:
            raise ValidationError("threads must be at least 1")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(lam=self.lam, epochs=self.epochs, batch_size=self.batch_size,
                           lr=self.lr, weight_decay=self.weight_decay,
                           betas=(self.beta1, self.beta2), patience=self.patience,
                           seed=self.seed, hinge_margin=self.hinge_margin)

    def match_options(self) -> MatchOptions:
        return MatchOptions(self.k_spans, self.k_tuples, self.top_k,
                            self.use_attention, self.use_visual)

    def provider_config(self) -> EmbeddingProviderConfig:
        return EmbeddingProviderConfig(self.provider, self.dim, dict(self.paths))

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name for f in fields(RunConfig)}


def load_toml(path) -> dict:
    """Read a TOML config; one level of tables is flattened ([train] lr = ...)."""
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    flat = {}
    for k, v in raw.items():
        if isinstance(v, dict) and k != "paths":
            flat.update(v)
        else:
            flat[k] = v
    unknown = set(flat) - _FIELDS
    if unknown:
        raise ValidationError(f"unknown config key(s) in {path}: {sorted(unknown)}")
    return flat


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    values = {}
    values.update(file_values or {})
    values.update({k: v for k, v in (flag_values or {}).items() if v is not None and k in _FIELDS})
    cfg = RunConfig(**values)
    return cfg.validate()
