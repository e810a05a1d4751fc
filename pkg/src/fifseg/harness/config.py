from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..loss import LossWeights
from ..model import ModelConfig


@dataclass
class TrainConfig:
    """Model plus optimisation settings.

    Defaults for the optimiser, loss weights, batch size and epoch count follow
    the published protocol; desk runs override them (see :meth:`desk`).
    ``data_dir`` points at an NPY dataset; when unset a synthetic set of
    ``train_count`` + ``val_count`` samples is generated from ``seed``.
    ``overfit`` trains on a single fixed batch and validates on that batch;
    ``stop_at_dice`` ends training once validation mean DICE exceeds it.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 1e-4
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 400
    batch_size: int = 16
    lambda1: float = 0.7
    lambda2: float = 0.3
    mutation_enabled: bool = True
    normalize_mutation: bool = False
    seed: int = 0
    output_dir: str = "runs/default"
    max_steps: int | None = None
    data_dir: str | None = None
    train_count: int = 32
    val_count: int = 8
    noise_sigma: float = 0.03
    augment: bool = True
    overfit: bool = False
    stop_at_dice: float | None = None
    threads: int = 1

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        self.betas = tuple(self.betas)
        self.validate()

    def validate(self) -> None:
        self.model.validate()
        if not self.lr >= 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"betas must be two values in [0, 1), got {self.betas}")
        LossWeights(self.lambda1, self.lambda2)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda1, self.lambda2)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Small CPU-friendly setup: 64x64 images, C=8, 5 classes."""
        kw = dict(lr=1e-3, epochs=20, batch_size=4, train_count=32, val_count=8)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["betas"] = list(self.betas)
        return d

    def replace(self, **changes) -> "TrainConfig":
        d = self.to_dict()
        model_changes = changes.pop("model", {})
        d["model"] = {**d["model"], **model_changes}
        d.update(changes)
        return TrainConfig.from_dict(d)
