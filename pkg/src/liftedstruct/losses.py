"""Contrastive, triplet and lifted structured losses with analytic gradients.

Every loss returns a :class:`LossOutput` holding the scalar value and the
gradient with respect to each embedded row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EmbeddingBatch, PairwiseDistances, ValidationError, pair_masks, pairwise_sq_distances

# chain factors (x_i - x_j) / D_ij are zeroed below this distance
COINCIDENT_EPS = 1e-12

LOSS_NAMES = ("contrastive", "triplet", "lifted-nonsmooth", "lifted-smooth")


@dataclass(frozen=True)
class LossConfig:
    margin_alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.margin_alpha) or self.margin_alpha < 0:
            raise ValidationError(f"margin_alpha must be finite and >= 0, got {self.margin_alpha}")


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        a, p, n = (np.asarray(v, dtype=np.int64).reshape(-1) for v in (self.anchors, self.positives, self.negatives))
        if not (a.shape == p.shape == n.shape):
            raise ValidationError("anchor, positive and negative index arrays must have equal length")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "positives", p)
        object.__setattr__(self, "negatives", n)

    def __len__(self):
        return self.anchors.shape[0]

    @classmethod
    def from_partition(cls, m: int) -> "TripletBatch":
        """Consecutive (anchor, positive, negative) rows: 0,1,2 then 3,4,5 and so on."""
        if m % 3:
            raise ValidationError(f"batch size {m} is not divisible by 3")
        idx = np.arange(m).reshape(-1, 3)
        return cls(idx[:, 0], idx[:, 1], idx[:, 2])


def chain_weights(D: np.ndarray, G: np.ndarray) -> np.ndarray:
    """G / D with the coincident-point rule applied (zero where D < eps)."""
    W = np.zeros_like(G)
    ok = D >= COINCIDENT_EPS
    W[ok] = G[ok] / D[ok]
    return W


def distance_grad_to_features(X: np.ndarray, D: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Map a symmetric matrix of dJ/dD_ab onto dJ/dx_a.

    ``G[a, b] == G[b, a]`` holds the partial for the undirected distance; the
    row gradient is ``sum_b G_ab (x_a - x_b) / D_ab``.
    """
    W = chain_weights(D, G)
    return W.sum(axis=1)[:, None] * X - W @ X


def _as_batch(batch) -> EmbeddingBatch:
    if isinstance(batch, EmbeddingBatch):
        return batch
    features, labels = batch
    return EmbeddingBatch(features, labels)


# ---------------------------------------------------------------------------
# baselines


def contrastive_loss(batch: EmbeddingBatch, pairing: Sequence[tuple[int, int, int]], cfg: LossConfig = LossConfig()) -> LossOutput:
    """Paired contrastive loss over m/2 disjoint pairs.

    ``J = 1/m * sum y D^2 + (1 - y) [alpha - D]_+^2``
    """
    batch = _as_batch(batch)
    m = batch.m
    if m % 2:
        raise ValidationError(f"contrastive loss needs an even batch, got m={m}")
    pairing = [(int(i), int(j), int(y)) for i, j, y in pairing]
    if len(pairing) != m // 2:
        raise ValidationError(f"expected {m // 2} disjoint pairs, got {len(pairing)}")
    seen = [i for i, j, _ in pairing] + [j for i, j, _ in pairing]
    if len(set(seen)) != len(seen) or min(seen) < 0 or max(seen) >= m:
        raise ValidationError("pairs must be disjoint and index into the batch")
    for i, j, y in pairing:
        if y not in (0, 1):
            raise ValidationError(f"pair ({i}, {j}) has label {y}, expected 0 or 1")
        if y != int(batch.labels[i] == batch.labels[j]):
            raise ValidationError(f"pair ({i}, {j}) has y={y} inconsistent with the class labels")

    X = batch.features
    alpha = cfg.margin_alpha
    grad = np.zeros_like(X)
    value = 0.0
    for i, j, y in pairing:
        diff = X[i] - X[j]
        sq = float(diff @ diff)
        if y:
            value += sq
            g = 2.0 * diff
        else:
            d = np.sqrt(sq)
            gap = alpha - d
            if gap <= 0:
                continue
            value += gap * gap
            g = -2.0 * gap * diff / d if d >= COINCIDENT_EPS else np.zeros_like(diff)
        grad[i] += g
        grad[j] -= g
    return LossOutput(value=value / m, grad=grad / m)


def triplet_loss(batch: EmbeddingBatch, triplets: TripletBatch | None = None, cfg: LossConfig = LossConfig()) -> LossOutput:
    """Triplet hinge ``3/(2m) * sum [D_ap^2 - D_an^2 + alpha]_+``.

    With ``triplets=None`` the batch is partitioned into consecutive triples.
    """
    batch = _as_batch(batch)
    m = batch.m
    if triplets is None:
        triplets = TripletBatch.from_partition(m)
    a, p, n = triplets.anchors, triplets.positives, triplets.negatives
    if len(triplets) == 0:
        raise ValidationError("no triplets given")
    if min(a.min(), p.min(), n.min()) < 0 or max(a.max(), p.max(), n.max()) >= m:
        raise ValidationError("triplet indices out of range")
    L = batch.labels
    bad = np.flatnonzero((L[a] != L[p]) | (L[a] == L[n]))
    if bad.size:
        t = int(bad[0])
        raise ValidationError(f"triplet {t} ({a[t]}, {p[t]}, {n[t]}) violates the label constraints")

    X = batch.features
    dap = X[a] - X[p]
    dan = X[a] - X[n]
    hinge = np.einsum("ij,ij->i", dap, dap) - np.einsum("ij,ij->i", dan, dan) + cfg.margin_alpha
    active = hinge > 0
    scale = 3.0 / (2.0 * m)
    value = scale * float(hinge[active].sum())

    grad = np.zeros_like(X)
    act = active[:, None]
    np.add.at(grad, a, scale * act * 2.0 * (X[n] - X[p]))
    np.add.at(grad, p, scale * act * -2.0 * dap)
    np.add.at(grad, n, scale * act * 2.0 * dan)
    return LossOutput(value=value, grad=grad)


# ---------------------------------------------------------------------------
# lifted structured loss


@dataclass(frozen=True)
class LiftedTerms:
    """Per positive pair quantities shared by value and gradient computation."""

    pairs_i: np.ndarray
    pairs_j: np.ndarray
    J: np.ndarray  # J_ij (smooth or non-smooth) per positive pair
    lse: np.ndarray  # the log-sum-exp (or max) part of J_ij


@dataclass(frozen=True)
class LiftedDistanceGrads:
    """dJ/dD for every positive pair.

    ``positive[p]`` is the partial w.r.t. D_ij of positive pair p;
    ``left[p, k]`` the partial w.r.t. D_ik for negatives of i and
    ``right[p, l]`` the partial w.r.t. D_jl for negatives of j (zero where
    (i, k) or (j, l) is not a negative pair).
    """

    pairs_i: np.ndarray
    pairs_j: np.ndarray
    positive: np.ndarray
    left: np.ndarray
    right: np.ndarray


def _negative_mask(labels: np.ndarray, negatives=None) -> np.ndarray:
    _, neg = pair_masks(labels)
    if negatives is None:
        return neg
    m = labels.shape[0]
    mask = np.zeros((m, m), dtype=bool)
    for i, k in negatives:
        if labels[i] == labels[k]:
            raise ValidationError(f"({i}, {k}) is not a negative pair")
        mask[i, k] = mask[k, i] = True
    return mask


def _positive_pairs(labels: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos, _ = pair_masks(labels)
    pi, pj = np.nonzero(pos)
    if pi.size == 0:
        raise ValidationError("batch contains no positive pair")
    has_neg = neg.any(axis=1)
    lonely = np.flatnonzero(~(has_neg[pi] | has_neg[pj]))
    if lonely.size:
        p = int(lonely[0])
        raise ValidationError(f"positive pair ({pi[p]}, {pj[p]}) has no incident negative pair")
    return pi, pj


def lifted_terms_smooth(D: PairwiseDistances, labels: np.ndarray, cfg: LossConfig = LossConfig(), negatives=None) -> LiftedTerms:
    """J~_ij = log(sum_k e^{alpha - D_ik} + sum_l e^{alpha - D_jl}) + D_ij, max-shifted."""
    labels = np.asarray(labels)
    neg = _negative_mask(labels, negatives)
    pi, pj = _positive_pairs(labels, neg)
    margin = np.where(neg, cfg.margin_alpha - D.dist, -np.inf)
    row_max = margin.max(axis=1)
    safe_max = np.where(np.isfinite(row_max), row_max, 0.0)
    row_sum = np.exp(margin - safe_max[:, None]).sum(axis=1)  # 0 for rows without negatives
    shift = np.maximum(row_max[pi], row_max[pj])
    total = np.exp(row_max[pi] - shift) * row_sum[pi] + np.exp(row_max[pj] - shift) * row_sum[pj]
    lse = shift + np.log(total)
    return LiftedTerms(pairs_i=pi, pairs_j=pj, J=lse + D.dist[pi, pj], lse=lse)


def lifted_distance_grads(D: PairwiseDistances, labels: np.ndarray, cfg: LossConfig = LossConfig(), negatives=None,
                          terms: LiftedTerms | None = None) -> LiftedDistanceGrads:
    """Partials of the smooth lifted loss w.r.t. the batch distances.

    dJ/dD_ij = J~_ij 1[J~_ij > 0] / |P| and, for each negative (i, k),
    dJ/dD_ik = -dJ/dD_ij * exp(alpha - D_ik) / exp(J~_ij - D_ij); likewise for j.
    """
    labels = np.asarray(labels)
    neg = _negative_mask(labels, negatives)
    if terms is None:
        terms = lifted_terms_smooth(D, labels, cfg, negatives)
    pi, pj = terms.pairs_i, terms.pairs_j
    n_pos = pi.shape[0]
    positive = np.where(terms.J > 0, terms.J, 0.0) / n_pos
    margin = np.where(neg, cfg.margin_alpha - D.dist, -np.inf)
    # exp(alpha - D_ik - lse_ij) <= 1, so no overflow
    left = -positive[:, None] * np.exp(margin[pi] - terms.lse[:, None])
    right = -positive[:, None] * np.exp(margin[pj] - terms.lse[:, None])
    return LiftedDistanceGrads(pairs_i=pi, pairs_j=pj, positive=positive, left=left, right=right)


def accumulate_embedding_grads(D: PairwiseDistances, partials: LiftedDistanceGrads, features: np.ndarray) -> np.ndarray:
    """Chain per-pair distance partials into dJ/df(x) for every row.

    Equivalent to the nested accumulation over positive pairs and their
    incident negatives: every partial dJ/dD_ab contributes
    dJ/dD_ab * (x_a - x_b) / D_ab to row a and the negation to row b.
    """
    X = np.asarray(features, dtype=np.float64)
    m = X.shape[0]
    pi, pj = partials.pairs_i, partials.pairs_j
    n_pos = pi.shape[0]
    # incidence matrices collapse per-pair rows onto the owning element i (resp. j)
    Ai = np.zeros((m, n_pos))
    Ai[pi, np.arange(n_pos)] = 1.0
    Aj = np.zeros((m, n_pos))
    Aj[pj, np.arange(n_pos)] = 1.0
    G = Ai @ partials.left + Aj @ partials.right
    G[pi, pj] += partials.positive  # positive pairs are distinct, so no index repeats
    G = G + G.T
    return distance_grad_to_features(X, D.dist, G)


def lifted_loss_smooth(batch: EmbeddingBatch, cfg: LossConfig = LossConfig(), negatives=None) -> LossOutput:
    """Smooth lifted structured loss ``1/(2|P|) sum_P max(0, J~_ij)^2``.

    ``negatives`` optionally restricts the negative pairs (i < k tuples) that
    enter the log-sum-exp; by default every cross-class pair in the batch is used.
    """
    batch = _as_batch(batch)
    D = pairwise_sq_distances(batch)
    terms = lifted_terms_smooth(D, batch.labels, cfg, negatives)
    hinge = np.maximum(terms.J, 0.0)
    value = float(hinge @ hinge) / (2.0 * hinge.shape[0])
    partials = lifted_distance_grads(D, batch.labels, cfg, negatives, terms=terms)
    grad = accumulate_embedding_grads(D, partials, batch.features)
    return LossOutput(value=value, grad=grad)


def lifted_terms_nonsmooth(D: PairwiseDistances, labels: np.ndarray, cfg: LossConfig = LossConfig(), negatives=None):
    """J_ij = max(max_k alpha - D_ik, max_l alpha - D_jl) + D_ij plus the argmax bookkeeping.

    Returns (terms, use_left, best_k, best_l); ties between the two branches
    go to the i side and ties within a branch to the lowest index.
    """
    labels = np.asarray(labels)
    neg = _negative_mask(labels, negatives)
    pi, pj = _positive_pairs(labels, neg)
    margin = np.where(neg, cfg.margin_alpha - D.dist, -np.inf)
    best = margin.argmax(axis=1)
    row_max = margin[np.arange(margin.shape[0]), best]
    use_left = row_max[pi] >= row_max[pj]
    inner = np.where(use_left, row_max[pi], row_max[pj])
    terms = LiftedTerms(pairs_i=pi, pairs_j=pj, J=inner + D.dist[pi, pj], lse=inner)
    return terms, use_left, best[pi], best[pj]


def lifted_loss_nonsmooth(batch: EmbeddingBatch, cfg: LossConfig = LossConfig(), negatives=None) -> LossOutput:
    """Nested-max lifted structured loss restricted to the batch, with a subgradient."""
    batch = _as_batch(batch)
    D = pairwise_sq_distances(batch)
    terms, use_left, best_k, best_l = lifted_terms_nonsmooth(D, batch.labels, cfg, negatives)
    pi, pj = terms.pairs_i, terms.pairs_j
    n_pos = pi.shape[0]
    hinge = np.maximum(terms.J, 0.0)
    value = float(hinge @ hinge) / (2.0 * n_pos)

    w = hinge / n_pos
    m = batch.m
    G = np.zeros((m, m))
    np.add.at(G, (pi, pj), w)
    src = np.where(use_left, pi, pj)
    dst = np.where(use_left, best_k, best_l)
    np.add.at(G, (src, dst), -w)
    G = G + G.T
    grad = distance_grad_to_features(batch.features, D.dist, G)
    return LossOutput(value=value, grad=grad)


# ---------------------------------------------------------------------------
# uniform entry point used by training and gradient checks


def random_contrastive_pairing(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Consecutive rows (0, 1), (2, 3), ... as the contrastive pairing."""
    labels = np.asarray(labels)
    return [(i, i + 1, int(labels[i] == labels[i + 1])) for i in range(0, labels.shape[0] - 1, 2)]


def evaluate_loss(name: str, batch: EmbeddingBatch, cfg: LossConfig = LossConfig(), *, pairing=None,
                  triplets: TripletBatch | None = None, negatives=None) -> LossOutput:
    if name == "contrastive":
        if pairing is None:
            pairing = random_contrastive_pairing(batch.labels)
        return contrastive_loss(batch, pairing, cfg)
    if name == "triplet":
        return triplet_loss(batch, triplets, cfg)
    if name == "lifted-smooth":
        return lifted_loss_smooth(batch, cfg, negatives)
    if name == "lifted-nonsmooth":
        return lifted_loss_nonsmooth(batch, cfg, negatives)
    raise ValidationError(f"unknown loss {name!r}; expected one of {', '.join(LOSS_NAMES)}")
