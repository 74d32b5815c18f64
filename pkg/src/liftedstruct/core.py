"""Embedding containers and dense pairwise distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def _check_finite_rows(features: np.ndarray, what: str = "features") -> None:
    bad = ~np.isfinite(features).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"{what} row {row} contains non-finite values")


@dataclass(frozen=True)
class EmbeddingBatch:
    """m embedded vectors of dimension c plus one integer class label per row."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim == 1:
            features = features[:, None]
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ValidationError(f"features must be an m x c array with m, c >= 1, got shape {features.shape}")
        _check_finite_rows(features)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValidationError(f"expected {features.shape[0]} labels, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if labels.size and not np.all(np.mod(labels, 1) == 0):
                raise ValidationError("labels must be integers")
            labels = labels.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise ValidationError("labels must be non-negative")
        features.setflags(write=False)
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def c(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class PairwiseDistances:
    """Squared and plain Euclidean distance matrices of one batch."""

    sq: np.ndarray
    dist: np.ndarray

    @property
    def m(self) -> int:
        return self.sq.shape[0]


def l2_normalize(features: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.maximum(norms, eps)


def pairwise_sq_distances(batch: EmbeddingBatch | np.ndarray, normalize: bool = False) -> PairwiseDistances:
    """Dense squared distances via the Gram identity ``|x|^2 1' + 1 |x|^2' - 2 X X'``.

    Round-off negatives are clamped to zero and the diagonal is forced to
    exactly zero. ``normalize`` projects rows onto the unit sphere first.
    """
    if isinstance(batch, EmbeddingBatch):
        X = batch.features
    else:
        X = np.asarray(batch, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        _check_finite_rows(X)
    if normalize:
        X = l2_normalize(X)
    sq_norms = np.einsum("ij,ij->i", X, X)
    sq = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (X @ X.T)
    # symmetrize exactly so sq[i, j] and sq[j, i] agree bit for bit
    sq = 0.5 * (sq + sq.T)
    np.maximum(sq, 0.0, out=sq)
    np.fill_diagonal(sq, 0.0)
    dist = np.sqrt(sq)
    sq.setflags(write=False)
    dist.setflags(write=False)
    return PairwiseDistances(sq=sq, dist=dist)


def pair_masks(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (positive, negative) masks; positive is upper-triangular, negative symmetric."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = np.triu(same, k=1)
    neg = ~same
    return pos, neg


def pair_sets(labels) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """All unordered pairs ``i < j`` split into same-label and different-label lists."""
    labels = np.asarray(labels)
    if labels.size < 1:
        raise ValidationError("at least one label is required")
    pos, neg = pair_masks(labels)
    neg = np.triu(neg, k=1)
    P = [(int(i), int(j)) for i, j in zip(*np.nonzero(pos))]
    N = [(int(i), int(j)) for i, j in zip(*np.nonzero(neg))]
    return P, N
