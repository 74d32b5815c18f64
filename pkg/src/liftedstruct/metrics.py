"""Retrieval and clustering metrics plus a seeded k-means clusterer."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .core import ValidationError, pairwise_sq_distances


@dataclass(frozen=True)
class Clustering:
    assignment: np.ndarray
    k: int
    centroids: np.ndarray | None = None
    inertia: float = float("nan")
    history: tuple[float, ...] = ()  # objective after every assignment step

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValidationError(f"cluster ids must lie in [0, {self.k})")
        object.__setattr__(self, "assignment", a)

    @property
    def empty_clusters(self) -> list[int]:
        return sorted(set(range(self.k)) - set(self.assignment.tolist()))


def recall_at_k(embeddings: np.ndarray, labels: np.ndarray, ks) -> dict[int, float]:
    """Fraction of queries with a same-class item among their K nearest neighbours.

    Exhaustive search; the query itself is excluded and equal distances are
    broken by ascending index.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    if n < 2:
        raise ValidationError("recall_at_k needs at least 2 items")
    ks = sorted({int(k) for k in ks})
    for k in ks:
        if k < 1 or k >= n:
            raise ValidationError(f"K={k} must satisfy 1 <= K < n={n}")
    sq = np.array(pairwise_sq_distances(X).sq)
    np.fill_diagonal(sq, np.inf)
    order = np.argsort(sq, axis=1, kind="stable")[:, : ks[-1]]
    hit = labels[order] == labels[:, None]
    first_hit = np.where(hit.any(axis=1), hit.argmax(axis=1), n)  # rank of first same-class neighbour
    return {k: float(np.mean(first_hit < k)) for k in ks}


def contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(clustering, labels) -> float:
    """I(clusters; classes) / ((H(clusters) + H(classes)) / 2), natural log.

    Both partitions trivial gives 1.0; exactly one trivial gives 0.0.
    """
    assignment = clustering.assignment if isinstance(clustering, Clustering) else np.asarray(clustering)
    labels = np.asarray(labels)
    if assignment.size == 0:
        raise ValidationError("nmi of an empty partition is undefined")
    if assignment.shape != labels.shape:
        raise ValidationError("clustering and labels differ in length")
    table = contingency(assignment, labels)
    h_w, h_c = _entropy(table.sum(axis=1)), _entropy(table.sum(axis=0))
    if h_w == 0 and h_c == 0:
        return 1.0
    if h_w == 0 or h_c == 0:
        return 0.0
    n = table.sum()
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(min(max(mi / ((h_w + h_c) / 2), 0.0), 1.0))


def pairwise_f1(clustering, labels) -> float:
    """Harmonic mean of pair precision and recall over all item pairs."""
    assignment = clustering.assignment if isinstance(clustering, Clustering) else np.asarray(clustering)
    labels = np.asarray(labels)
    if assignment.size < 2:
        raise ValidationError("pairwise_f1 needs at least 2 items")
    if assignment.shape != labels.shape:
        raise ValidationError("clustering and labels differ in length")
    pairs = lambda counts: float((counts * (counts - 1) // 2).sum())  # noqa: E731
    table = contingency(assignment, labels)
    tp = pairs(table)
    same_cluster = pairs(table.sum(axis=1))
    same_class = pairs(table.sum(axis=0))
    precision = tp / same_cluster if same_cluster else 0.0
    recall = tp / same_class if same_class else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def kmeans(embeddings: np.ndarray, k: int, seed: int = 0, max_iters: int = 300) -> Clustering:
    """Lloyd's algorithm from k-means++ seeding.

    Stops at an assignment fixpoint or after ``max_iters`` assignment steps.
    An emptied cluster keeps its previous centroid.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} must satisfy 1 <= k <= n={n}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest = np.sum((X - centroids[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centroids[c] = X[idx]
        closest = np.minimum(closest, np.sum((X - centroids[c]) ** 2, axis=1))

    def assign(C):
        d = np.sum(X ** 2, axis=1)[:, None] + np.sum(C ** 2, axis=1)[None, :] - 2 * X @ C.T
        a = np.argmin(d, axis=1)
        return a, float(np.sum((X - C[a]) ** 2))

    history = []
    assignment, obj = assign(centroids)
    history.append(obj)
    for _ in range(max_iters - 1):
        for c in range(k):
            members = assignment == c
            if members.any():
                centroids[c] = X[members].mean(axis=0)
        new, obj = assign(centroids)
        history.append(obj)
        if np.array_equal(new, assignment):
            break
        assignment = new
    return Clustering(assignment, k, centroids, float(np.sum((X - centroids[assignment]) ** 2)), tuple(history))


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    recall_at: dict[int, float]
    nmi: float
    f1: float
    config: dict = field(default_factory=dict)
    seed: int = 0
    assignment: list[int] | None = None
    num_items: int = 0
    num_classes: int = 0

    def to_json(self) -> str:
        doc = {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "nmi": self.nmi,
            "f1": self.f1,
            "seed": self.seed,
            "num_items": self.num_items,
            "num_classes": self.num_classes,
            "config": self.config,
        }
        if self.assignment is not None:
            doc["assignment"] = self.assignment
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls({int(k): v for k, v in doc["recall_at"].items()}, doc["nmi"], doc["f1"], doc.get("config", {}),
                   doc.get("seed", 0), doc.get("assignment"), doc.get("num_items", 0), doc.get("num_classes", 0))

    def write_recall_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "recall"])
            for k, v in sorted(self.recall_at.items()):
                w.writerow([k, repr(v)])


def evaluate_embeddings(embeddings: np.ndarray, labels: np.ndarray, ks=(1, 2, 4, 8), seed: int = 0,
                        config: dict | None = None, max_iters: int = 300) -> EvalReport:
    labels = np.asarray(labels)
    n_cls = int(np.unique(labels).size)
    clusters = kmeans(embeddings, n_cls, seed=seed, max_iters=max_iters)
    return EvalReport(
        recall_at=recall_at_k(embeddings, labels, ks),
        nmi=nmi(clusters, labels),
        f1=pairwise_f1(clusters, labels),
        config=dict(config or {}),
        seed=seed,
        assignment=clusters.assignment.tolist(),
        num_items=int(len(labels)),
        num_classes=n_cls,
    )
