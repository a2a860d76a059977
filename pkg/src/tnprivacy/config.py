"""JSON experiment configuration, validated with field-path errors."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import attack
from .train import TrainConfig


class ConfigError(ValueError):
    """Validation failure; ``problems`` holds ``(dotted path, message)`` pairs."""

    def __init__(self, problems: list[tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{p}: {m}" for p, m in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TrainSpec(_Strict):
    batch_size: int = Field(gt=0)
    lr: float = Field(gt=0)
    l2: float = Field(0.0, ge=0)
    epochs: int = Field(ge=0)
    val_fraction: float = Field(0.0, ge=0, lt=1)
    patience: Optional[int] = Field(None, gt=0)

    def build(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(self.batch_size, self.lr, self.l2, self.epochs, self.val_fraction,
                           seed, self.patience)


class FeatureSpec(_Strict):
    name: str
    kind: Literal["binary", "continuous"]
    role: Literal["relevant", "irrelevant", "label"]
    lo: float = 0.0
    hi: float = 1.0
    values: Optional[dict[str, int]] = None
    column: Optional[str] = None
    source: Optional[Literal["date-parity"]] = None


class DatasetSpec(_Strict):
    source: Literal["surrogate", "csv"] = "surrogate"
    rows: int = Field(20000, gt=0)
    path: Optional[str] = None
    features: Optional[list[FeatureSpec]] = None
    balance_by: list[str] = []

    @model_validator(mode="after")
    def _csv_needs_path(self):
        if self.source == "csv" and (self.path is None or self.features is None):
            raise ValueError("csv datasets need both 'path' and 'features'")
        if self.source == "csv" and not Path(self.path).exists():
            raise ValueError(f"path {self.path!r} does not exist")
        return self


class NnSpec(_Strict):
    sizes: list[int] = [9, 16, 16, 8, 4, 2]
    train: TrainSpec = TrainSpec(batch_size=8, lr=3e-4, l2=6e-3, epochs=60, val_fraction=0.2)


class MpsSpec(_Strict):
    bond_dim: int = Field(2, gt=0)
    output_site: int | None = Field(None, ge=0)
    train: TrainSpec = TrainSpec(batch_size=100, lr=0.1, l2=0.0, epochs=20)


class MetaSpec(_Strict):
    lr_strength: float = Field(1.0, gt=0)
    lr_max_iter: int = Field(1000, gt=0)
    mlp_hidden: list[int] = [20, 20, 10, 10, 2]
    mlp_lr: float = Field(1e-3, gt=0)
    mlp_l2: float = Field(1e-4, ge=0)
    mlp_batch: int = Field(1000, gt=0)
    mlp_epochs: int = Field(1000, ge=0)
    mlp_patience: Optional[int] = Field(None, gt=0)
    mlp_val_fraction: float = Field(0.2, ge=0, lt=1)
    normalization: Literal["standardize", "none"] = "standardize"


class ShadowSpec(_Strict):
    levels: list[float] = [0.5, 0.8, 1.0]
    attacker_datasets: int = Field(8, gt=0)
    attacked_datasets: int = Field(2, gt=0)
    models_per_dataset: int = Field(10, gt=0)
    dataset_size: int = Field(500, gt=0)
    repetitions: int = Field(50, gt=0)
    variants: list[Literal[attack.VARIANTS]] = list(attack.VARIANTS)
    feature: str = "parity"
    gauge_seed: Optional[int] = None
    eval_rows: int = Field(1000, gt=0)
    holdout: float = Field(0.5, gt=0, lt=1)
    meta_models: dict[str, Literal["lr", "mlp"]] = {
        "nn": "lr", "mps-raw": "mlp", "mps-svd": "mlp", "mps-svd+signs": "mlp", "mps-univocal": "mlp"}

    @field_validator("levels")
    @classmethod
    def _levels_in_range(cls, v):
        for p in v:
            if not 0.5 <= p <= 1.0:
                raise ValueError(f"imbalance level {p} outside [0.5, 1]")
        return v


class ToySpec(_Strict):
    models_per_sign: int = Field(100, gt=0)
    rows: int = Field(200, gt=0)
    init_scale: float = Field(0.1, gt=0)
    activation: Literal["identity", "sigmoid", "relu"] = "identity"
    train: TrainSpec = TrainSpec(batch_size=20, lr=1e-2, epochs=50)
    test_fraction: float = Field(0.3, gt=0, lt=1)
    splits: int = Field(20, gt=0)


class CanonicalSpec(_Strict):
    sites: list[int] = [3, 4, 5, 6]
    phys_dim: int = Field(2, gt=0)
    bond_dim: int = Field(2, gt=0)
    models: int = Field(50, ge=0)
    gauges: int = Field(20, ge=0)
    include_singular: bool = True
    tolerance: float = Field(1e-6, gt=0)

    @field_validator("sites")
    @classmethod
    def _enough_sites(cls, v):
        for n in v:
            if n < 3:
                raise ValueError(f"chains need at least 3 sites, got {n}")
        return v


class ExperimentConfig(_Strict):
    kind: Literal["toy-vuln", "surrogate-pipeline", "canonical-props"] = "surrogate-pipeline"
    seed: int = Field(ge=0)
    workers: int = Field(1, gt=0)
    out: str = "results"
    dataset: DatasetSpec = DatasetSpec()
    nn: NnSpec = NnSpec()
    mps: MpsSpec = MpsSpec()
    shadow: ShadowSpec = ShadowSpec()
    meta: MetaSpec = MetaSpec()
    toy: ToySpec = ToySpec()
    canonical: CanonicalSpec = CanonicalSpec()

    def sha256(self) -> str:
        # Worker count and output directory do not change results.
        body = self.model_dump(mode="json", exclude={"workers", "out"})
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def shadow_config(self) -> attack.ShadowConfig:
        s, m = self.shadow, self.meta
        return attack.ShadowConfig(
            levels=tuple(s.levels), attacker_datasets=s.attacker_datasets,
            attacked_datasets=s.attacked_datasets, models_per_dataset=s.models_per_dataset,
            dataset_size=s.dataset_size, repetitions=s.repetitions, variants=tuple(s.variants),
            feature=s.feature, seed=self.seed, gauge_seed=s.gauge_seed, eval_rows=s.eval_rows,
            holdout=s.holdout, nn_sizes=tuple(self.nn.sizes), nn_train=self.nn.train.build(),
            mps_train=self.mps.train.build(), mps_bond_dim=self.mps.bond_dim,
            mps_output_site=self.mps.output_site,
            meta=attack.MetaConfig(
                lr_strength=m.lr_strength, lr_max_iter=m.lr_max_iter, mlp_hidden=tuple(m.mlp_hidden),
                mlp_lr=m.mlp_lr, mlp_l2=m.mlp_l2, mlp_batch=m.mlp_batch, mlp_epochs=m.mlp_epochs,
                mlp_patience=m.mlp_patience, mlp_val_fraction=m.mlp_val_fraction,
                normalization=m.normalization),
            meta_models=tuple(sorted(s.meta_models.items())))


def _problems(exc: ValidationError) -> list[tuple[str, str]]:
    out = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append((path, err["msg"]))
    return out


def parse_config(raw: dict, seed: int | None = None, workers: int | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError([("<root>", "config must be a JSON object")])
    raw = dict(raw)
    if seed is not None:
        raw["seed"] = seed
    if workers is not None:
        raw["workers"] = workers
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_problems(exc)) from None


def load_config(path, seed: int | None = None, workers: int | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read {path}: {exc.strerror}")]) from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"line {exc.lineno}: {exc.msg}")]) from None
    return parse_config(raw, seed, workers)
