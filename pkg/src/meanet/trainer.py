"""Training stages: main block and cloud model at the cloud, then frozen-main blockwise
training of the adaptive and extension blocks on hard-class data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import arch, nn
from .complexity import (
    ClassPartition,
    ClassStats,
    build_class_stats,
    filter_hard_subset,
    predicted_class,
    random_partition,
    select_hard_classes,
)
from .data import Dataset, split_train_val
from .errors import ConfigError, ContractError, InvalidInputError

log = logging.getLogger(__name__)


@dataclass
class CurvePoint:
    stage: str
    epoch: int
    split: str
    loss: float
    accuracy: float


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def _evaluate(layers: Sequence[nn.DenseLayer], x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    logits = nn.predict(layers, x)
    return nn.cross_entropy_batch(logits, y)[0], _accuracy(logits, y)


def fit_classifier(
    layers: Sequence[nn.DenseLayer],
    x: np.ndarray,
    y: np.ndarray,
    config: nn.SgdConfig,
    epochs: int,
    stage: str = "classifier",
    val: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[CurvePoint]:
    """Mini-batch SGD on cross-entropy at the last layer of ``layers``.

    Frozen layers in the stack are run forward but never updated.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    opt = nn.Sgd(layers, config)
    curve: list[CurvePoint] = []
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            trace = nn.forward(layers, x[idx])
            _, grad = nn.cross_entropy_batch(trace.output, y[idx])
            opt.step(nn.backward(trace, grad), epoch)
        curve.append(CurvePoint(stage, epoch, "train", *_evaluate(layers, x, y)))
        if val is not None and len(val[1]):
            curve.append(CurvePoint(stage, epoch, "val", *_evaluate(layers, *val)))
    return curve


def train_main(net: arch.MEANet, dataset: Dataset, config: nn.SgdConfig, epochs: int,
               val: Dataset | None = None) -> list[CurvePoint]:
    """Optimise main block + exit 1 on every class with cross-entropy at exit 1."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot train the main block on an empty dataset")
    if dataset.num_classes != net.config.num_classes:
        raise ConfigError("dataset and model disagree on the number of classes")
    return fit_classifier(
        net.main_layers, dataset.features, dataset.labels, config, epochs, "main",
        (val.features, val.labels) if val is not None else None,
    )


def check_cloud_larger(cloud_widths: Sequence[int], main_spec: arch.BlockSpec) -> None:
    """The cloud model must be at least as deep as the main block, at least as wide
    at every shared depth, and not identical to it."""
    main = main_spec.layer_widths
    cloud = tuple(cloud_widths)
    if len(cloud) < len(main) or cloud == main or any(c < m for c, m in zip(cloud, main)):
        raise ConfigError(f"cloud widths {cloud} are not strictly larger than main {main}")


def train_cloud(widths: Sequence[int], dataset: Dataset, config: nn.SgdConfig, epochs: int,
                main_spec: arch.BlockSpec | None = None, val: Dataset | None = None,
                seed: int = 0) -> tuple[list[nn.DenseLayer], list[CurvePoint]]:
    if main_spec is not None:
        check_cloud_larger(widths, main_spec)
    if len(dataset) == 0:
        raise InvalidInputError("cannot train the cloud model on an empty dataset")
    layers = arch.build_classifier(dataset.dim, widths, dataset.num_classes, seed)
    curve = fit_classifier(
        layers, dataset.features, dataset.labels, config, epochs, "cloud",
        (val.features, val.labels) if val is not None else None,
    )
    return layers, curve


def train_extension_adaptive(
    net: arch.MEANet,
    x_hard: np.ndarray,
    y_hard: np.ndarray,
    config: nn.SgdConfig,
    epochs: int,
) -> list[CurvePoint]:
    """Blockwise stage: main frozen, loss = cross-entropy at exit 2 on remapped hard labels.

    The frozen main block's features are computed once; gradients are only
    ever allocated for adaptive and extension parameters.
    """
    if not net.main_frozen:
        raise ContractError("freeze the main block before training the extension")
    x = np.asarray(x_hard, dtype=np.float64)
    y = np.asarray(y_hard, dtype=np.int64)
    if len(y) == 0:
        raise InvalidInputError("no hard-class training data")
    if y.min() < 0 or y.max() >= net.config.num_hard:
        raise InvalidInputError(f"hard labels must lie in [0, {net.config.num_hard})")
    d = net.config.feature_dim
    _, features = net.forward_main(x)
    rng = np.random.default_rng(config.seed)
    opt = nn.Sgd(net.edge_layers, config)
    curve: list[CurvePoint] = []
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            a_trace = nn.forward(net.adaptive, x[idx])
            merged = net.merge(features[idx], a_trace.output)
            e_trace = nn.forward(net.extension_path, merged)
            _, grad = nn.cross_entropy_batch(e_trace.output, y[idx])
            e_grads = nn.backward(e_trace, grad, need_input_grad=True)
            g_in = e_grads.input
            g_f2 = g_in if net.config.merge == "sum" else g_in[:, d:]
            a_grads = nn.backward(a_trace, g_f2)
            opt.step(nn.Gradients(a_grads.params + e_grads.params), epoch)
        logits = net.forward_extension(features, net.adaptive_features(x))
        loss = nn.cross_entropy_batch(logits, y)[0]
        curve.append(CurvePoint("extension", epoch, "train", loss, _accuracy(logits, y)))
    return curve


def train_feature_tail(net: arch.MEANet, dataset: Dataset, widths: Sequence[int],
                       config: nn.SgdConfig, epochs: int, seed: int = 0) -> list[nn.DenseLayer]:
    """Cloud-side tail for feature offloading: a classifier over main-block features F."""
    _, features = net.forward_main(dataset.features)
    layers = arch.build_classifier(features.shape[1], widths, dataset.num_classes, seed)
    fit_classifier(layers, features, dataset.labels, config, epochs, "feature_tail")
    return layers


def main_block_stats(net: arch.MEANet, dataset: Dataset) -> ClassStats:
    y1, _ = net.forward_main(dataset.features)
    return build_class_stats(predicted_class(y1), dataset.labels, dataset.num_classes)


@dataclass
class TrainingPlan:
    """Everything the full training pipeline needs besides the data."""

    model: arch.MEAConfig
    main_sgd: nn.SgdConfig
    edge_sgd: nn.SgdConfig
    cloud_sgd: nn.SgdConfig
    main_epochs: int = 100
    edge_epochs: int = 100
    cloud_epochs: int = 100
    cloud_widths: tuple[int, ...] = (64, 64, 64)
    val_fraction: float = 0.10
    seed: int = 0
    selection: str = "precision"  # or "random"
    train_cloud: bool = True


@dataclass
class PipelineResult:
    net: arch.MEANet
    partition: ClassPartition
    cloud: list[nn.DenseLayer] | None
    stats: ClassStats
    train: Dataset
    val: Dataset
    curve: list[CurvePoint] = field(default_factory=list)
    hard_subset_size: int = 0
    main_digest: str = ""


def run_pipeline(dataset: Dataset, plan: TrainingPlan, out_dir: str | Path | None = None) -> PipelineResult:
    """Train main + cloud, rank classes on validation, remap, freeze, train extension.

    With ``out_dir`` the stage artifacts are written there: main and cloud
    checkpoints, the partition file handed to the edge, the final MEANet
    checkpoint and the training curve.
    """
    cfg = plan.model
    if plan.selection not in ("precision", "random"):
        raise ConfigError(f"unknown class selection {plan.selection!r}")
    train, val = split_train_val(dataset, plan.val_fraction, plan.seed)
    net = arch.build(cfg, plan.seed)

    # main block and cloud model
    curve = train_main(net, train, plan.main_sgd, plan.main_epochs, val)
    cloud = None
    if plan.train_cloud:
        cloud, cloud_curve = train_cloud(plan.cloud_widths, train, plan.cloud_sgd,
                                         plan.cloud_epochs, cfg.main_spec, val, plan.seed + 1)
        curve += cloud_curve
    main_digest = arch.parameter_digest(net.main_layers)

    # validation statistics, hard classes, label map
    stats = main_block_stats(net, val)
    if plan.selection == "precision":
        partition = select_hard_classes(stats, cfg.num_hard)
    else:
        partition = random_partition(cfg.num_classes, cfg.num_hard, plan.seed)
    log.info("hard classes: %s", partition.hard_set)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        # the partition reaches the edge as a file hand-off
        arch.save_meanet(net, out / "main.ckpt.json")
        if cloud is not None:
            arch.save_classifier(cloud, out / "cloud.ckpt.json", {"widths": list(plan.cloud_widths)})
        partition.save(out / "partition.json")
        partition = ClassPartition.load(out / "partition.json")

    # hard subset
    x_hard, y_hard, _ = filter_hard_subset(train.features, train.labels, partition)
    log.info("hard subset: %d of %d training instances", len(y_hard), len(train))

    # freeze and train the new blocks
    net.freeze_main()
    curve += train_extension_adaptive(net, x_hard, y_hard, plan.edge_sgd, plan.edge_epochs)
    if arch.parameter_digest(net.main_layers) != main_digest:
        raise ContractError("main block changed during blockwise training")

    if out is not None:
        arch.save_meanet(net, out / "mea.ckpt.json")
        write_curve(curve, out / "training_curve.csv")
    return PipelineResult(net, partition, cloud, stats, train, val, curve, len(y_hard), main_digest)


def write_curve(curve: Sequence[CurvePoint], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["stage,epoch,split,loss,accuracy"]
    lines += [f"{p.stage},{p.epoch},{p.split},{p.loss:.17g},{p.accuracy:.17g}" for p in curve]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
