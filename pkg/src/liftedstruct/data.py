"""Labeled vector datasets: CSV / JSON-lines ingestion, synthetic blobs, class-disjoint splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ValidationError


class DatasetParseError(ValidationError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: dict = field(default_factory=dict)
    class_names: tuple[str, ...] | None = None  # only for string-labelled files; id i <-> class_names[i]

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise ValidationError(f"features {features.shape} and labels {labels.shape} do not line up")
        bad = ~np.isfinite(features).all(axis=1)
        if bad.any():
            raise ValidationError(f"row {int(np.flatnonzero(bad)[0])} has non-finite features")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    @property
    def class_index(self) -> dict[int, np.ndarray]:
        return {int(c): np.flatnonzero(self.labels == c) for c in self.classes}

    def subset(self, rows: np.ndarray, **provenance) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], {**self.provenance, **provenance}, self.class_names)


# ---------------------------------------------------------------------------
# ingestion


def _encode_labels(raw: list[str], where: list[int], path) -> tuple[np.ndarray, tuple[str, ...] | None]:
    try:
        ints = [int(v) for v in raw]
    except ValueError:
        ints = None
    if ints is not None:
        for v, line in zip(ints, where):
            if v < 0:
                raise DatasetParseError(f"{path}:{line}: negative class id {v}")
        return np.array(ints, dtype=np.int64), None
    names = tuple(sorted(set(raw)))
    lookup = {n: i for i, n in enumerate(names)}
    return np.array([lookup[v] for v in raw], dtype=np.int64), names


def load_dataset(path, format: str | None = None) -> LabeledDataset:
    """Read a headerless ``label,f0,f1,...`` CSV or a JSON-lines file.

    JSON-lines rows look like ``{"label": 3, "features": [0.1, 0.2]}``. The
    format is guessed from the extension when not given. Integer labels are
    kept as is; any non-integer label switches to string labels encoded in
    sorted order.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    if format not in ("csv", "jsonl"):
        raise ValidationError(f"unknown dataset format {format!r}")
    raw_labels, rows, lines = [], [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        if format == "csv":
            records = ((n, rec) for n, rec in enumerate(csv.reader(fh), start=1))
        else:
            records = ((n, line) for n, line in enumerate(fh, start=1))
        for lineno, rec in records:
            if format == "csv":
                if not rec or all(not v.strip() for v in rec):
                    continue
                label, values = rec[0].strip(), rec[1:]
            else:
                if not rec.strip():
                    continue
                try:
                    obj = json.loads(rec)
                except json.JSONDecodeError as exc:
                    raise DatasetParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict) or "label" not in obj or "features" not in obj:
                    raise DatasetParseError(f"{path}:{lineno}: expected an object with 'label' and 'features'")
                label, values = str(obj["label"]), obj["features"]
                if not isinstance(values, list):
                    raise DatasetParseError(f"{path}:{lineno}: 'features' must be a list")
            if label == "":
                raise DatasetParseError(f"{path}:{lineno}: missing label")
            if not values:
                raise DatasetParseError(f"{path}:{lineno}: row has a label but no features")
            try:
                vec = [float(v) for v in values]
            except (TypeError, ValueError):
                raise DatasetParseError(f"{path}:{lineno}: non-numeric feature value") from None
            if not all(math.isfinite(v) for v in vec):
                raise DatasetParseError(f"{path}:{lineno}: non-finite feature value")
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise DatasetParseError(f"{path}:{lineno}: expected {width} features, found {len(vec)}")
            raw_labels.append(label)
            rows.append(vec)
            lines.append(lineno)
    if not rows:
        raise DatasetParseError(f"{path}: no data rows")
    labels, names = _encode_labels(raw_labels, lines, path)
    return LabeledDataset(np.array(rows), labels, {"source": str(path), "format": format}, names)


def _format_row(label, values) -> str:
    return ",".join([str(label)] + [repr(float(v)) for v in values])


def save_dataset(dataset: LabeledDataset, path) -> None:
    """Write the headerless CSV format; floats use shortest round-trip repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for y, x in zip(dataset.labels, dataset.features):
            label = dataset.class_names[y] if dataset.class_names is not None else int(y)
            fh.write(_format_row(label, x) + "\n")


def save_embeddings(path, embeddings: np.ndarray, labels: np.ndarray) -> None:
    """Embedding export: one ``label,e0,...,e(c-1)`` row per item."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for y, e in zip(labels, embeddings):
            fh.write(_format_row(int(y), e) + "\n")


# ---------------------------------------------------------------------------
# synthesis


def make_blobs(num_classes: int, per_class: int, dim: int, center_scale: float = 1.0,
               noise_sigma: float = 0.1, seed: int = 0) -> LabeledDataset:
    """Gaussian blobs: centres uniform in [-center_scale, center_scale]^dim, isotropic noise."""
    for name, v in (("num_classes", num_classes), ("per_class", per_class), ("dim", dim)):
        if int(v) < 1:
            raise ValidationError(f"{name} must be positive, got {v}")
    if center_scale < 0 or noise_sigma < 0:
        raise ValidationError("center_scale and noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_scale, center_scale, size=(num_classes, dim))
    labels = np.repeat(np.arange(num_classes), per_class)
    features = centers[labels] + noise_sigma * rng.standard_normal(size=(labels.size, dim))
    recipe = {"recipe": "blobs", "num_classes": num_classes, "per_class": per_class, "dim": dim,
              "center_scale": center_scale, "noise_sigma": noise_sigma, "seed": seed}
    return LabeledDataset(features, labels, recipe)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitSpec:
    ordering: str = "by-class-id"  # or "by-seed-shuffle"
    train_fraction_of_classes: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.ordering not in ("by-class-id", "by-seed-shuffle"):
            raise ValidationError(f"unknown split ordering {self.ordering!r}")
        if not 0 < self.train_fraction_of_classes < 1:
            raise ValidationError("train_fraction_of_classes must lie in (0, 1)")


def split_classes(classes: np.ndarray, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray]:
    classes = np.sort(np.asarray(classes))
    if classes.size < 2:
        raise ValidationError(f"a class-disjoint split needs at least 2 classes, got {classes.size}")
    if spec.ordering == "by-seed-shuffle":
        classes = np.random.default_rng(spec.seed).permutation(classes)
    n_train = math.ceil(classes.size * spec.train_fraction_of_classes - 1e-12)
    n_train = min(max(n_train, 1), classes.size - 1)
    return np.sort(classes[:n_train]), np.sort(classes[n_train:])


def class_disjoint_split(dataset: LabeledDataset, spec: SplitSpec = SplitSpec()) -> tuple[LabeledDataset, LabeledDataset]:
    """Train on the first classes, test on the rest; row order inside each half is preserved."""
    train_cls, test_cls = split_classes(dataset.classes, spec)
    in_train = np.isin(dataset.labels, train_cls)
    train = dataset.subset(np.flatnonzero(in_train), split="train")
    test = dataset.subset(np.flatnonzero(~in_train), split="test")
    return train, test
