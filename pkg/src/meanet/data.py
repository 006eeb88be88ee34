"""Datasets: synthetic Gaussian mixtures with designed hard classes, IDX and CSV loaders, splits."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # (N, D) float64
    labels: np.ndarray  # (N,) int64
    num_classes: int
    provenance: str = ""
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise InvalidInputError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index: np.ndarray, provenance: str | None = None) -> Dataset:
        return Dataset(
            self.features[index],
            self.labels[index],
            self.num_classes,
            provenance if provenance is not None else self.provenance,
            dict(self.meta),
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class SyntheticSpec:
    """Gaussian-mixture benchmark with a designated group of hard classes.

    Each easy class is a tight bundle of modes (spread ``mode_spread`` times
    ``separation``) around its own centre; class centres are about
    ``separation`` apart. Hard-class modes are scattered independently
    around a common far-away centre, so hard classes interleave, and their
    offsets from that centre are shrunk by ``(1 - overlap)``: overlap 0 keeps
    them as far apart as easy-class centres, overlap near 1 piles them up.
    """

    num_classes: int = 8
    dim: int = 16
    num_hard: int = 4
    separation: float = 8.0
    overlap: float = 0.3
    samples_per_class: int = 500
    modes_per_class: int = 4
    mode_spread: float = 0.15
    noise: float = 1.0
    seed: int = 0
    hard_classes: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.overlap < 1:
            raise InvalidInputError("overlap must lie in [0, 1)")
        if not 1 <= self.num_hard < self.num_classes:
            raise InvalidInputError("num_hard must lie in [1, num_classes)")
        if self.samples_per_class < 1 or self.modes_per_class < 1 or self.dim < 1:
            raise InvalidInputError("sizes must be positive")
        if self.hard_classes is not None:
            self.hard_classes = tuple(sorted(int(c) for c in self.hard_classes))
            if len(self.hard_classes) != self.num_hard:
                raise InvalidInputError("hard_classes must list num_hard classes")

    def designated_hard(self) -> tuple[int, ...]:
        if self.hard_classes is not None:
            return self.hard_classes
        rng = np.random.default_rng([self.seed, 1])
        return tuple(sorted(int(c) for c in rng.choice(self.num_classes, self.num_hard, replace=False)))


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample the mixture. Noise draws do not depend on ``overlap``, so the same
    seed at two overlap values gives the same points up to the moved means."""
    hard = spec.designated_hard()
    k, m, d = spec.num_classes, spec.modes_per_class, spec.dim
    geo = np.random.default_rng([spec.seed, 2])
    # random points with pairwise distance ~ separation
    scale = spec.separation / math.sqrt(2 * d)
    centres = geo.normal(0.0, scale, size=(k, 1, d))
    spread = geo.normal(0.0, scale * spec.mode_spread, size=(k, m, d))
    scattered = geo.normal(0.0, scale, size=(k, m, d))
    base = centres + spread
    direction = geo.normal(size=d)
    direction /= np.linalg.norm(direction)
    centre = direction * 4.0 * spec.separation
    means = base.copy()
    for c in hard:
        means[c] = centre + (1.0 - spec.overlap) * scattered[c]

    rng = np.random.default_rng([spec.seed, 3])
    n = spec.samples_per_class
    modes = rng.integers(0, m, size=(k, n))
    noise = rng.normal(0.0, spec.noise, size=(k, n, d))
    features = means[np.arange(k)[:, None], modes] + noise
    labels = np.repeat(np.arange(k), n)
    # interleave classes so that file order carries no class structure
    order = rng.permutation(k * n)
    return Dataset(
        features.reshape(k * n, d)[order],
        labels[order],
        k,
        f"synthetic(seed={spec.seed}, overlap={spec.overlap})",
        {
            "hard_classes": list(hard),
            "mode_means": means.reshape(k * m, d),
            "mode_labels": np.repeat(np.arange(k), m),
            "spec": asdict(spec),
        },
    )


def nearest_centroid_predict(features: np.ndarray, centroids: np.ndarray,
                             centroid_labels: np.ndarray) -> np.ndarray:
    d2 = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.asarray(centroid_labels)[np.argmin(d2, axis=1)]


# --- IDX ------------------------------------------------------------------

def _read_idx_header(raw: bytes, expected_magic: int, path: Path) -> tuple[tuple[int, ...], int]:
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte offset {len(raw)}")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(
            f"{path}: bad magic number 0x{magic:08x} at byte offset 0, expected 0x{expected_magic:08x}"
        )
    ndim = magic & 0xFF
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise FormatError(f"{path}: truncated dimension header at byte offset {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    need = end + int(np.prod(dims))
    if len(raw) != need:
        raise FormatError(
            f"{path}: payload ends at byte offset {len(raw)}, header implies {need}"
        )
    return dims, end


def load_idx(images_path: str | Path, labels_path: str | Path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair (big-endian, unsigned bytes). Pixels are scaled to [0, 1]."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    raw_img = images_path.read_bytes()
    raw_lab = labels_path.read_bytes()
    img_dims, img_off = _read_idx_header(raw_img, IDX_IMAGES_MAGIC, images_path)
    lab_dims, lab_off = _read_idx_header(raw_lab, IDX_LABELS_MAGIC, labels_path)
    if img_dims[0] != lab_dims[0]:
        raise FormatError(
            f"header count mismatch: {images_path} has {img_dims[0]} items at byte offset 4, "
            f"{labels_path} has {lab_dims[0]}"
        )
    n = img_dims[0]
    pixels = np.frombuffer(raw_img, dtype=np.uint8, offset=img_off).reshape(n, -1)
    labels = np.frombuffer(raw_lab, dtype=np.uint8, offset=lab_off).astype(np.int64)
    bad = np.flatnonzero(labels >= num_classes)
    if bad.size:
        raise FormatError(
            f"{labels_path}: label {labels[bad[0]]} >= {num_classes} at byte offset {lab_off + bad[0]}"
        )
    return Dataset(pixels.astype(np.float64) / 255.0, labels, num_classes, f"idx:{images_path.name}")


def write_idx(dataset_pixels: np.ndarray, labels: np.ndarray, images_path: str | Path,
              labels_path: str | Path) -> None:
    """Write uint8 images of shape (N, rows, cols) and labels as an IDX pair."""
    px = np.asarray(dataset_pixels, dtype=np.uint8)
    lab = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">I", IDX_IMAGES_MAGIC) + struct.pack(">3I", *px.shape) + px.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">I", IDX_LABELS_MAGIC) + struct.pack(">I", lab.shape[0]) + lab.tobytes()
    )


# --- CSV ------------------------------------------------------------------

def load_csv(path: str | Path, num_classes: int | None = None) -> Dataset:
    """Rows of ``label,feature,...``. A first row whose label is not an integer is a header."""
    path = Path(path)
    labels, rows = [], []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
            try:
                label = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise FormatError(f"{path}: line {lineno}: label {label} outside [0, {num_classes})")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if width < 2:
        raise FormatError(f"{path}: rows need a label and at least one feature")
    k = num_classes if num_classes is not None else max(labels) + 1
    return Dataset(np.array(rows), np.array(labels), k, f"csv:{path.name}")


def save_csv(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def write_manifest(dataset: Dataset, path: str | Path, files: Sequence[str] = ()) -> None:
    Path(path).write_text(
        json.dumps(
            {
                "K": dataset.num_classes,
                "D": dataset.dim,
                "N": len(dataset),
                "provenance": dataset.provenance,
                "files": list(files),
            },
            indent=1,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )


def normalize(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Standardise features with the training split's per-feature mean and std."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd[sd == 0] = 1.0
    return [
        Dataset((d.features - mu) / sd, d.labels, d.num_classes, d.provenance, dict(d.meta))
        for d in (train, *others)
    ]


# --- splitting ------------------------------------------------------------

def split_indices(labels: np.ndarray, num_classes: int, val_fraction: float,
                  seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < val_fraction < 1:
        raise InvalidInputError("val_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise InvalidInputError(f"class {c} has {members.size} sample; stratification needs 2")
        members = rng.permutation(members)
        n_val = min(max(1, int(round(val_fraction * members.size))), members.size - 1)
        val_idx.append(members[:n_val])
        train_idx.append(members[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def split_train_val(dataset: Dataset, val_fraction: float = 0.10,
                    seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified, seeded split into disjoint train and validation parts."""
    tr, va = split_indices(dataset.labels, dataset.num_classes, val_fraction, seed)
    return dataset.subset(tr), dataset.subset(va)
