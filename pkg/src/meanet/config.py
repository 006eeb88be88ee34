"""Experiment configuration: one JSON file with a section per concern."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import arch, data, nn
from .cost import EnergyParams
from .errors import ConfigError


def _build(cls, d: dict | None, section: str):
    d = d or {}
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


@dataclass
class DatasetSection:
    kind: str = "synthetic"  # synthetic | csv | idx
    synthetic: dict = field(default_factory=dict)
    train: str | None = None  # csv path, or idx "images,labels"
    test: str | None = None
    num_classes: int | None = None
    test_fraction: float = 0.3  # synthetic only
    normalize: bool = True


@dataclass
class ModelSection:
    variant: str = "B"
    stack: tuple[int, ...] = (8, 16)
    split: int | None = None
    adaptive: tuple[int, ...] = (16,)
    extension: tuple[int, ...] = (32, 32)
    merge: str = "sum"
    num_hard: int | None = None  # default: half the classes
    cloud_widths: tuple[int, ...] = (64, 64, 64)
    feature_tail_widths: tuple[int, ...] = (64, 64)


@dataclass
class SgdSection:
    main: dict = field(default_factory=lambda: {"initial_lr": 0.05, "milestones": [30, 48]})
    edge: dict = field(default_factory=lambda: {"initial_lr": 0.02, "milestones": [30, 48]})
    cloud: dict = field(default_factory=lambda: {"initial_lr": 0.05, "milestones": [30, 48]})
    main_epochs: int = 60
    edge_epochs: int = 60
    cloud_epochs: int = 60


@dataclass
class TrainingSection:
    val_fraction: float = 0.10
    selection: str = "precision"


@dataclass
class RouterSection:
    threshold: float | None = None  # default: midpoint of (mu_c, mu_w)
    cloud_mode: str = "raw-model"
    failure_rate: float = 0.0
    grid: tuple[float, ...] = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0, 1.5, 2.5)


@dataclass
class CostSection:
    energy: dict = field(default_factory=dict)
    q: float = 0.5


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    sgd: SgdSection = field(default_factory=SgdSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    router: RouterSection = field(default_factory=RouterSection)
    cost: CostSection = field(default_factory=CostSection)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {
            "dataset": DatasetSection, "model": ModelSection, "sgd": SgdSection,
            "training": TrainingSection, "router": RouterSection, "cost": CostSection,
        }
        unknown = set(d) - set(sections) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(seed=int(d.get("seed", 0)),
                  **{k: _build(v, d.get(k), k) for k, v in sections.items()})
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    # --- derived objects -------------------------------------------------

    def sgd_config(self, which: str, seed_offset: int = 0) -> nn.SgdConfig:
        d = dict(getattr(self.sgd, which))
        d.setdefault("seed", self.seed + seed_offset)
        try:
            return nn.SgdConfig(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sgd.{which}: {exc}") from exc

    def synthetic_spec(self) -> data.SyntheticSpec:
        d = dict(self.dataset.synthetic)
        d.setdefault("seed", self.seed)
        try:
            return data.SyntheticSpec(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dataset.synthetic: {exc}") from exc

    def energy(self) -> EnergyParams:
        try:
            return EnergyParams(**self.cost.energy)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"cost.energy: {exc}") from exc

    def mea_config(self, input_dim: int, num_classes: int, num_hard: int | None = None) -> arch.MEAConfig:
        m = self.model
        if num_hard is None:
            num_hard = m.num_hard if m.num_hard is not None else num_classes // 2
        return arch.MEAConfig.from_stack(
            m.variant, input_dim, m.stack, num_classes, num_hard, m.adaptive, m.extension,
            m.split, m.merge,
        )

    def validate(self) -> None:
        if self.dataset.kind not in ("synthetic", "csv", "idx"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind != "synthetic" and not self.dataset.train:
            raise ConfigError("dataset.train is required for file datasets")
        if self.training.selection not in ("precision", "random"):
            raise ConfigError(f"unknown selection {self.training.selection!r}")
        if self.router.threshold is not None and self.router.threshold < 0:
            raise ConfigError("router.threshold must be nonnegative")
        if not self.router.grid or any(t < 0 for t in self.router.grid):
            raise ConfigError("router.grid must be nonempty and nonnegative")
        for which in ("main", "edge", "cloud"):
            self.sgd_config(which)
        self.energy()
        if self.dataset.kind == "synthetic":
            self.synthetic_spec()
        # catches inconsistent widths before anything is trained
        k = self.synthetic_spec().num_classes if self.dataset.kind == "synthetic" else 4
        self.mea_config(1, k, min(self.model.num_hard or 1, k))


@dataclass
class Splits:
    train: data.Dataset
    val: data.Dataset
    test: data.Dataset


def _load_file_dataset(kind: str, spec: str, num_classes: int | None) -> data.Dataset:
    if kind == "csv":
        return data.load_csv(spec, num_classes)
    images, _, labels = spec.partition(",")
    if not labels:
        raise ConfigError("idx datasets are given as 'images_path,labels_path'")
    return data.load_idx(images.strip(), labels.strip(), num_classes or 10)


def load_splits(cfg: ExperimentConfig) -> Splits:
    """Deterministic train / validation / test splits for every command."""
    ds = cfg.dataset
    if ds.kind == "synthetic":
        full = data.gen_synthetic(cfg.synthetic_spec())
        fit, test = data.split_train_val(full, ds.test_fraction, cfg.seed + 7919)
    else:
        fit = _load_file_dataset(ds.kind, ds.train, ds.num_classes)
        if ds.test:
            test = _load_file_dataset(ds.kind, ds.test, ds.num_classes or fit.num_classes)
        else:
            fit, test = data.split_train_val(fit, 0.2, cfg.seed + 7919)
    if ds.normalize:
        fit, test = data.normalize(fit, test)
    train, val = data.split_train_val(fit, cfg.training.val_fraction, cfg.seed)
    return Splits(train, val, test)


def describe_defaults(cfg: ExperimentConfig) -> str:
    """One-line provenance string for report headers."""
    return "config=" + json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
