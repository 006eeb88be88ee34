"""Edge-cloud inference routing.

Every instance runs the main block. If the cloud is reachable and the exit-1
entropy exceeds the threshold the instance is offloaded. Otherwise instances
predicted as a hard class also run the adaptive + extension path and the
more confident exit wins (ties go to the extension); the rest exit at the
main block.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import arch, nn
from .complexity import ClassPartition, ErrorType, detection_accuracy, error_taxonomy
from .errors import CalibrationError, ContractError, InvalidInputError

log = logging.getLogger(__name__)


class Exit(str, enum.Enum):
    MAIN = "MainExit"
    EXTENSION = "ExtensionExit"
    CLOUD = "CloudExit"


class Payload(str, enum.Enum):
    RAW = "RawData"
    FEATURES = "Features"


class CloudMode(str, enum.Enum):
    ORACLE = "oracle"
    RAW_MODEL = "raw-model"
    FEATURE_TAIL = "feature-tail"
    OFF = "off"

    @property
    def payload(self) -> Payload | None:
        if self is CloudMode.FEATURE_TAIL:
            return Payload.FEATURES
        if self is CloudMode.OFF:
            return None
        return Payload.RAW


@dataclass
class Cloud:
    """Simulated cloud endpoint.

    ``failure_rate`` makes a deterministic pseudo-random subset of requests
    fail (keyed by seed and instance id) so that fallback paths can be tested.
    """

    mode: CloudMode
    layers: list[nn.DenseLayer] | None = None
    failure_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.mode = CloudMode(self.mode)
        if self.mode in (CloudMode.RAW_MODEL, CloudMode.FEATURE_TAIL) and self.layers is None:
            raise ContractError(f"cloud mode {self.mode.value} needs a trained model")
        if not 0 <= self.failure_rate <= 1:
            raise InvalidInputError("failure_rate must lie in [0, 1]")

    @property
    def available(self) -> bool:
        return self.mode is not CloudMode.OFF

    def fails(self, instance_id: int) -> bool:
        if self.failure_rate == 0:
            return False
        return bool(np.random.default_rng([self.seed, instance_id]).random() < self.failure_rate)

    def predict(self, kind: Payload, payload: np.ndarray, label: int | None = None) -> int:
        return cloud_predict(self, kind, payload, label)

    def predict_batch(self, kind: Payload, payload: np.ndarray,
                      labels: np.ndarray | None = None) -> np.ndarray:
        _check_payload(self.mode, kind)
        if self.mode is CloudMode.ORACLE:
            if labels is None:
                raise ContractError("the oracle cloud needs the true labels")
            return np.asarray(labels, dtype=np.int64)
        return np.argmax(nn.predict(self.layers, payload), axis=-1)


def _check_payload(mode: CloudMode, kind: Payload) -> None:
    if mode is CloudMode.OFF:
        raise ContractError("cloud is off")
    if mode.payload is not Payload(kind):
        raise ContractError(f"cloud mode {mode.value} cannot take a {Payload(kind).value} payload")


def cloud_predict(cloud: Cloud, kind: Payload, payload: np.ndarray, label: int | None = None) -> int:
    """Class predicted by the cloud for one instance."""
    _check_payload(cloud.mode, kind)
    if cloud.mode is CloudMode.ORACLE:
        if label is None:
            raise ContractError("the oracle cloud needs the true label")
        return int(label)
    logits = nn.predict(cloud.layers, payload)
    return int(np.argmax(logits))


@dataclass
class RoutingRecord:
    instance_id: int
    entropy_main: float
    conf_main: float
    conf_ext: float | None
    decision: Exit
    payload: Payload | None
    predicted: int
    main_pred: int
    is_hard: bool
    label: int | None = None
    correct: bool | None = None
    cloud_failed: bool = False

    def to_json(self) -> str:
        d = asdict(self)
        d["decision"] = self.decision.value
        d["payload"] = self.payload.value if self.payload is not None else None
        return json.dumps(d, sort_keys=True)


@dataclass
class ThresholdRange:
    mu_c: float
    mu_w: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.mu_c + self.mu_w)


def main_entropies(net: arch.MEANet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(entropy in nats, argmax) of the main exit for each row of ``x``."""
    y1, _ = net.forward_main(np.atleast_2d(x))
    return nn.entropy(nn.softmax(y1)), np.argmax(y1, axis=1)


def calibrate_threshold(net: arch.MEANet, x: np.ndarray, y: np.ndarray) -> ThresholdRange:
    """Mean main-exit entropy of correct and of wrong validation predictions."""
    y = np.asarray(y)
    if y.size == 0:
        raise CalibrationError("empty calibration set")
    h, pred = main_entropies(net, x)
    return threshold_range(h, pred == y)


def threshold_range(entropies: np.ndarray, correct: np.ndarray) -> ThresholdRange:
    entropies = np.asarray(entropies, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if not correct.any():
        raise CalibrationError("no correct predictions: mu_c is undefined")
    if correct.all():
        raise CalibrationError("no wrong predictions: mu_w is undefined")
    rng = ThresholdRange(float(entropies[correct].mean()), float(entropies[~correct].mean()))
    if not rng.mu_c < rng.mu_w:
        log.warning("mu_c=%.4f is not below mu_w=%.4f", rng.mu_c, rng.mu_w)
    return rng


def _decide(
    instance_id: int,
    y1: np.ndarray,
    y2: np.ndarray | None,
    partition: ClassPartition,
    entropy_main: float,
    threshold: float,
    cloud: Cloud | None,
    cloud_available: bool,
    cloud_answer,
    label: int | None,
) -> RoutingRecord:
    """One routing decision. ``cloud_answer()`` is only called when offloading;
    ``y2`` may be None when the instance is not hard."""
    p1 = nn.softmax(y1)
    main_pred = int(np.argmax(p1))
    conf_main = float(p1[main_pred])
    hard = partition.is_hard_class(main_pred)
    failed = False

    if cloud_available and cloud is not None and cloud.available and entropy_main > threshold:
        if not cloud.fails(instance_id):
            pred = int(cloud_answer())
            return RoutingRecord(instance_id, entropy_main, conf_main, None, Exit.CLOUD,
                                 cloud.mode.payload, pred, main_pred, hard, label,
                                 None if label is None else pred == label)
        failed = True

    conf_ext = None
    if hard:
        if y2 is None:
            raise ContractError("hard instance routed without extension logits")
        p2 = nn.softmax(y2)
        ext_local = int(np.argmax(p2))
        conf_ext = float(p2[ext_local])
        if conf_main > conf_ext:
            decision, pred = Exit.MAIN, main_pred
        else:
            decision, pred = Exit.EXTENSION, partition.inverse_dict[ext_local]
    else:
        decision, pred = Exit.MAIN, main_pred
    return RoutingRecord(instance_id, entropy_main, conf_main, conf_ext, decision, None, pred,
                         main_pred, hard, label, None if label is None else pred == label, failed)


def route_instance(
    net: arch.MEANet,
    partition: ClassPartition,
    x: np.ndarray,
    threshold: float,
    cloud: Cloud | None = None,
    cloud_available: bool = True,
    instance_id: int = 0,
    label: int | None = None,
) -> RoutingRecord:
    if threshold < 0 or math.isnan(threshold):
        raise InvalidInputError("threshold must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    y1, features = net.forward_main(x)
    h = float(nn.entropy(nn.softmax(y1)))
    y2 = None
    if partition.is_hard_class(int(np.argmax(y1))):
        y2 = net.forward_extension(features, net.adaptive_features(x))

    def answer() -> int:
        kind = cloud.mode.payload
        return cloud.predict(kind, x if kind is Payload.RAW else features, label)

    return _decide(instance_id, y1, y2, partition, h, threshold, cloud, cloud_available,
                   answer, label)


@dataclass
class InferenceReport:
    n: int
    threshold: float
    accuracy: float
    hard_class_accuracy: float
    main_accuracy: float
    detection_accuracy: float
    frac_main: float
    frac_extension: float
    beta: float
    attempted_beta: float
    cloud_failures: int
    taxonomy: dict[str, int] = field(default_factory=dict)
    mean_entropy_correct: float = float("nan")
    mean_entropy_wrong: float = float("nan")

    def row(self) -> dict:
        d = asdict(self)
        tax = d.pop("taxonomy")
        errors = sum(v for k, v in tax.items() if k != ErrorType.CORRECT.value)
        for t in ErrorType:
            d[f"count_{t.value}"] = tax.get(t.value, 0)
            if t is not ErrorType.CORRECT:
                d[f"frac_{t.value}"] = tax.get(t.value, 0) / errors if errors else 0.0
        return d


def run_inference(
    net: arch.MEANet,
    partition: ClassPartition,
    x: np.ndarray,
    y: np.ndarray | None,
    threshold: float,
    cloud: Cloud | None = None,
    cloud_available: bool = True,
) -> tuple[list[RoutingRecord], InferenceReport | None]:
    """Route every row of ``x``. With labels, also summarise into a report."""
    if threshold < 0 or math.isnan(threshold):
        raise InvalidInputError("threshold must be nonnegative")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    y1, features = net.forward_main(x)
    h = nn.entropy(nn.softmax(y1))
    main_pred = np.argmax(y1, axis=1)
    hard_rows = np.flatnonzero(partition.hard_mask(main_pred))
    y2 = np.empty((n, net.config.num_hard))
    if hard_rows.size:
        y2[hard_rows] = net.forward_extension(features[hard_rows], net.adaptive_features(x[hard_rows]))
    hard_set = set(hard_rows.tolist())

    offload = np.zeros(n, dtype=bool)
    if cloud_available and cloud is not None and cloud.available:
        offload = h > threshold
    answers = np.zeros(n, dtype=np.int64)
    rows = np.flatnonzero(offload)
    if rows.size:
        kind = cloud.mode.payload
        payload = x[rows] if kind is Payload.RAW else features[rows]
        answers[rows] = cloud.predict_batch(kind, payload, None if y is None else np.asarray(y)[rows])

    records = []
    for i in range(n):
        label = None if y is None else int(y[i])
        records.append(_decide(i, y1[i], y2[i] if i in hard_set else None, partition, float(h[i]),
                               threshold, cloud, cloud_available,
                               lambda i=i: answers[i], label))
    report = summarize(records, partition, threshold) if y is not None else None
    return records, report


def summarize(records: Sequence[RoutingRecord], partition: ClassPartition,
              threshold: float) -> InferenceReport:
    n = len(records)
    if n == 0:
        raise InvalidInputError("no records to summarise")
    labels = np.array([r.label for r in records])
    pred = np.array([r.predicted for r in records])
    main_pred = np.array([r.main_pred for r in records])
    h = np.array([r.entropy_main for r in records])
    decisions = [r.decision for r in records]
    true_hard = partition.hard_mask(labels)
    main_ok = main_pred == labels
    tax = error_taxonomy(main_pred, labels, partition)
    attempted = sum(1 for r in records if r.decision is Exit.CLOUD or r.cloud_failed)
    return InferenceReport(
        n=n,
        threshold=float(threshold),
        accuracy=float(np.mean(pred == labels)),
        hard_class_accuracy=float(np.mean(pred[true_hard] == labels[true_hard])) if true_hard.any() else float("nan"),
        main_accuracy=float(np.mean(main_ok)),
        detection_accuracy=detection_accuracy([r.is_hard for r in records], true_hard),
        frac_main=decisions.count(Exit.MAIN) / n,
        frac_extension=decisions.count(Exit.EXTENSION) / n,
        beta=decisions.count(Exit.CLOUD) / n,
        attempted_beta=attempted / n,
        cloud_failures=sum(r.cloud_failed for r in records),
        taxonomy={t.value: c for t, c in tax.items()},
        mean_entropy_correct=float(h[main_ok].mean()) if main_ok.any() else float("nan"),
        mean_entropy_wrong=float(h[~main_ok].mean()) if (~main_ok).any() else float("nan"),
    )


def beta_at(entropies: np.ndarray, threshold: float) -> float:
    """Fraction of instances whose main-exit entropy exceeds the threshold."""
    h = np.asarray(entropies)
    return float(np.mean(h > threshold))


def write_records(records: Iterable[RoutingRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_records(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_report_csv(rows: Sequence[dict], path: str | Path, header_comment: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
