"""Class-wise difficulty: confusion statistics, hard-class selection, IsHard, error taxonomy."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, InvalidInputError
from .nn import softmax

PARTITION_FORMAT = "meanet-partition/1"


@dataclass
class ClassStats:
    confusion: np.ndarray  # rows = true class, cols = predicted class

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def precision(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(np.float64)
        predicted = self.confusion.sum(axis=0).astype(np.float64)
        # a never-predicted class gets precision 0, which ranks it hardest
        return np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)

    @property
    def fdr(self) -> np.ndarray:
        return 1.0 - self.precision

    @property
    def recall(self) -> np.ndarray:
        tp = np.diag(self.confusion).astype(np.float64)
        support = self.confusion.sum(axis=1).astype(np.float64)
        return np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)


def build_class_stats(predictions: Sequence[int], labels: Sequence[int], k: int) -> ClassStats:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidInputError("predictions and labels must be 1-D and of equal length")
    for name, arr in (("prediction", pred), ("label", true)):
        bad = np.flatnonzero((arr < 0) | (arr >= k))
        if bad.size:
            raise InvalidInputError(f"{name} {arr[bad[0]]} at index {bad[0]} is outside [0, {k})")
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    return ClassStats(confusion)


@dataclass
class ClassPartition:
    num_classes: int
    hard_set: tuple[int, ...]
    # ranking source, kept for reports; None for random or hand-made partitions
    precision: tuple[float, ...] | None = None
    method: str = "precision"

    def __post_init__(self) -> None:
        self.hard_set = tuple(sorted(int(c) for c in self.hard_set))
        if len(set(self.hard_set)) != len(self.hard_set):
            raise InvalidInputError("hard classes must be distinct")
        if not self.hard_set or self.hard_set[0] < 0 or self.hard_set[-1] >= self.num_classes:
            raise InvalidInputError(f"hard classes must be a nonempty subset of [0, {self.num_classes})")
        self._hard = frozenset(self.hard_set)

    @property
    def num_hard(self) -> int:
        return len(self.hard_set)

    @property
    def class_dict(self) -> dict[int, int]:
        """Original label -> hard label, numbered in ascending original-class order."""
        out, label = {}, 0
        for c in range(self.num_classes):
            if c in self._hard:
                out[c] = label
                label += 1
        return out

    @property
    def inverse_dict(self) -> dict[int, int]:
        return {v: k for k, v in self.class_dict.items()}

    @property
    def easy_set(self) -> tuple[int, ...]:
        return tuple(c for c in range(self.num_classes) if c not in self._hard)

    def is_hard_class(self, c: int) -> bool:
        return int(c) in self._hard

    def hard_mask(self, labels: np.ndarray) -> np.ndarray:
        return np.isin(np.asarray(labels), self.hard_set)

    def to_dict(self) -> dict:
        return {
            "format": PARTITION_FORMAT,
            "num_classes": self.num_classes,
            "classes": list(range(self.num_classes)),
            "hard_set": list(self.hard_set),
            "class_dict": {str(k): v for k, v in self.class_dict.items()},
            "method": self.method,
            "precision": list(self.precision) if self.precision is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ClassPartition:
        if d.get("format") != PARTITION_FORMAT:
            raise FormatError(f"unknown partition format {d.get('format')!r}")
        try:
            part = cls(
                int(d["num_classes"]),
                tuple(d["hard_set"]),
                tuple(d["precision"]) if d.get("precision") is not None else None,
                d.get("method", "precision"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed partition: {exc}") from exc
        stored = {int(k): int(v) for k, v in d.get("class_dict", {}).items()}
        if stored and stored != part.class_dict:
            raise FormatError("stored class_dict disagrees with the hard set")
        return part

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ClassPartition:
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON at line {exc.lineno}") from exc
        return cls.from_dict(d)


def select_hard_classes(stats: ClassStats, num_hard: int | None = None) -> ClassPartition:
    """The ``num_hard`` lowest-precision classes; ties go to the lower class id.

    ``num_hard`` defaults to half the classes.
    """
    k = stats.num_classes
    if num_hard is None:
        num_hard = k // 2
    if not 1 <= num_hard <= k:
        raise InvalidInputError(f"num_hard must lie in [1, {k}]")
    precision = stats.precision
    order = sorted(range(k), key=lambda c: (precision[c], c))
    return ClassPartition(k, tuple(order[:num_hard]), tuple(float(p) for p in precision))


def random_partition(num_classes: int, num_hard: int, seed: int) -> ClassPartition:
    """Uniformly random hard set; the ablation baseline for precision ranking."""
    rng = np.random.default_rng(seed)
    chosen = rng.choice(num_classes, size=num_hard, replace=False)
    return ClassPartition(num_classes, tuple(int(c) for c in chosen), method="random")


def filter_hard_subset(
    x: np.ndarray, y: np.ndarray, partition: ClassPartition
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Keep hard-class instances in their original order and remap their labels.

    Returns (x_hard, y_hard, kept_indices).
    """
    y = np.asarray(y, dtype=np.int64)
    index = np.flatnonzero(partition.hard_mask(y))
    lookup = np.full(partition.num_classes, -1, dtype=np.int64)
    for c, new in partition.class_dict.items():
        lookup[c] = new
    return np.asarray(x)[index], lookup[y[index]], index


def predicted_class(logits: np.ndarray) -> np.ndarray | int:
    """argmax of softmax; numpy's argmax already breaks ties to the lowest index."""
    p = softmax(logits)
    return np.argmax(p, axis=-1) if p.ndim == 2 else int(np.argmax(p))


def is_hard(logits: np.ndarray, partition: ClassPartition) -> bool | np.ndarray:
    pred = predicted_class(logits)
    if np.ndim(pred) == 0:
        return partition.is_hard_class(int(pred))
    return partition.hard_mask(pred)


def confidence(logits: np.ndarray) -> float | np.ndarray:
    """Maximum softmax probability."""
    p = softmax(logits)
    return p.max(axis=-1) if p.ndim == 2 else float(p.max())


class ErrorType(str, enum.Enum):
    CORRECT = "Correct"
    TYPE_I = "TypeI"  # easy class predicted as a hard class
    TYPE_II = "TypeII"  # hard class predicted as an easy class
    TYPE_III = "TypeIII"  # easy class predicted as another easy class
    TYPE_IV = "TypeIV"  # hard class predicted as another hard class


def classify_error(pred_class: int, true_class: int, partition: ClassPartition) -> ErrorType:
    k = partition.num_classes
    if not (0 <= pred_class < k and 0 <= true_class < k):
        raise InvalidInputError("classes must lie in [0, K)")
    if pred_class == true_class:
        return ErrorType.CORRECT
    true_hard = partition.is_hard_class(true_class)
    pred_hard = partition.is_hard_class(pred_class)
    if not true_hard:
        return ErrorType.TYPE_I if pred_hard else ErrorType.TYPE_III
    return ErrorType.TYPE_IV if pred_hard else ErrorType.TYPE_II


def error_taxonomy(
    predictions: Iterable[int], labels: Iterable[int], partition: ClassPartition
) -> dict[ErrorType, int]:
    counts = {t: 0 for t in ErrorType}
    for p, t in zip(predictions, labels):
        counts[classify_error(int(p), int(t), partition)] += 1
    return counts


def detection_accuracy(decisions: Sequence[bool], true_hardness: Sequence[bool]) -> float:
    """Fraction of instances where the IsHard decision matches the true class's hardness."""
    d = np.asarray(decisions, dtype=bool)
    t = np.asarray(true_hardness, dtype=bool)
    if d.size == 0:
        raise InvalidInputError("detection accuracy of an empty set is undefined")
    if d.shape != t.shape:
        raise InvalidInputError("decisions and hardness flags differ in length")
    return float(np.mean(d == t))
