"""Mini-batch construction.

Lifted batches are built from randomly drawn positive pairs; every same-class
pair among the chosen members then counts as a positive and every cross-class
pair as a negative. In ``pool-mined`` mode each element of each positive pair
additionally pulls in its nearest different-class rows from an embedded
candidate pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError, pair_masks
from .data import LabeledDataset

MINING_MODES = ("within-batch", "pool-mined")


class SamplingError(ValidationError):
    pass


@dataclass(frozen=True)
class MiningConfig:
    batch_size: int = 128
    negatives_per_positive_element: int = 1
    candidate_pool_size: int = 512
    mode: str = "within-batch"

    def __post_init__(self):
        if self.batch_size < 4:
            raise ValidationError(f"batch_size must be >= 4, got {self.batch_size}")
        if self.negatives_per_positive_element < 1:
            raise ValidationError("negatives_per_positive_element must be >= 1")
        if self.candidate_pool_size < self.batch_size:
            raise ValidationError("candidate_pool_size must be >= batch_size")
        if self.mode not in MINING_MODES:
            raise ValidationError(f"unknown mining mode {self.mode!r}")


@dataclass(frozen=True)
class BatchPlan:
    member_indices: np.ndarray  # dataset rows, in batch order
    positive_pairs: tuple[tuple[int, int], ...]  # batch positions (i < j)
    seed: int | None = None
    mined: tuple[int, ...] = ()  # dataset rows added by mining, hardest first

    def labels(self, dataset: LabeledDataset) -> np.ndarray:
        return dataset.labels[self.member_indices]


def _finalize(members, dataset: LabeledDataset, seed, mined=()) -> BatchPlan:
    members = np.asarray(members, dtype=np.int64)
    if np.unique(members).size != members.size:
        raise SamplingError("batch members must be distinct")
    labels = dataset.labels[members]
    pos, _ = pair_masks(labels)
    P = [(int(i), int(j)) for i, j in zip(*np.nonzero(pos))]
    if not P:
        raise SamplingError("batch contains no positive pair")
    if np.unique(labels).size < 2:
        raise SamplingError("batch contains a single class, so no negative pairs")
    return BatchPlan(members, tuple(P), seed, tuple(int(v) for v in mined))


def plan_random_batch(dataset: LabeledDataset, cfg: MiningConfig, rng: np.random.Generator,
                      seed: int | None = None, pair_budget: int | None = None) -> BatchPlan:
    """Draw random positive pairs (class chosen uniformly, then two unused rows) up to the batch size.

    ``pair_budget`` caps the number of members that come from drawn pairs; in
    pool-mined mode it defaults to ``batch_size // (1 + k)`` so mined
    negatives have room. Spare slots are filled with random unused rows.
    """
    index = dataset.class_index
    if len(index) < 2:
        raise SamplingError("dataset needs at least 2 classes")
    if not any(rows.size >= 2 for rows in index.values()):
        raise SamplingError("no class has 2 examples, so no positive pair can be formed")
    if pair_budget is None:
        pair_budget = cfg.batch_size
        if cfg.mode == "pool-mined":
            pair_budget = max(2, cfg.batch_size // (1 + cfg.negatives_per_positive_element))
    pair_budget = min(pair_budget, cfg.batch_size)

    remaining = {c: list(rng.permutation(rows)) for c, rows in index.items()}
    members: list[int] = []
    classes_used: set[int] = set()
    while len(members) + 2 <= pair_budget:
        eligible = [c for c, rows in remaining.items() if len(rows) >= 2]
        if not eligible:
            break
        if len(classes_used) == 1 and len(eligible) > 1:
            # second pair from a new class so the batch has negatives early
            eligible = [c for c in eligible if c not in classes_used] or eligible
        c = eligible[int(rng.integers(len(eligible)))]
        members += [int(remaining[c].pop()), int(remaining[c].pop())]
        classes_used.add(c)

    fill = cfg.batch_size - len(members) if cfg.mode == "within-batch" else 0
    pool = np.array([r for rows in remaining.values() for r in rows], dtype=np.int64)
    if len(classes_used) == 1:
        others = pool[dataset.labels[pool] != dataset.labels[members[0]]]
        pick = int(others[rng.integers(others.size)])
        if len(members) >= cfg.batch_size:
            members[-1] = pick
        else:
            members.append(pick)
            fill -= 1
        pool = pool[pool != pick]
    if fill > 0 and pool.size:
        members += [int(v) for v in rng.choice(np.sort(pool), size=min(fill, pool.size), replace=False)]
    return _finalize(members, dataset, seed)


def mine_hard_negatives(plan: BatchPlan, dataset: LabeledDataset, pool_indices: np.ndarray,
                        pool_embeddings: np.ndarray, member_embeddings: np.ndarray, cfg: MiningConfig) -> BatchPlan:
    """Add the k nearest different-class pool rows of every positive-pair element.

    Both the left and the right element of each pair mine their own
    negatives. Additions are deduplicated and ranked hardest first; when the
    batch is full, members that belong to no positive pair are evicted before
    a mined row is dropped.
    """
    pool_indices = np.asarray(pool_indices, dtype=np.int64)
    pool_emb = np.asarray(pool_embeddings, dtype=np.float64)
    member_emb = np.asarray(member_embeddings, dtype=np.float64)
    if pool_emb.shape[0] != pool_indices.size or member_emb.shape[0] != plan.member_indices.size:
        raise ValidationError("embedding arrays do not match the pool / batch sizes")
    members = plan.member_indices
    in_pair = sorted({p for pair in plan.positive_pairs for p in pair})
    pool_labels = dataset.labels[pool_indices]
    k = cfg.negatives_per_positive_element

    pair_labels = dataset.labels[members[in_pair]]
    different = pool_labels[None, :] != pair_labels[:, None]
    lacking = ~different.any(axis=1)
    if lacking.any():
        raise SamplingError(f"candidate pool has no row of a class other than {pair_labels[np.argmax(lacking)]}")
    d = np.sum((pool_emb[None, :, :] - member_emb[in_pair][:, None, :]) ** 2, axis=2)
    d[~different] = np.inf
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    near_d = np.take_along_axis(d, order, axis=1)
    keep_mask = np.isfinite(near_d)
    rows = pool_indices[order[keep_mask]]
    dists = near_d[keep_mask]
    best: dict[int, float] = {}  # dataset row -> smallest distance to any pair element
    for row, dist in zip(rows.tolist(), dists.tolist()):
        if row not in best or dist < best[row]:
            best[row] = dist
    member_set = set(int(v) for v in members)
    mined = [r for r, _ in sorted(best.items(), key=lambda kv: (kv[1], kv[0])) if r not in member_set]

    keep = [int(members[p]) for p in in_pair]
    spare = [int(members[p]) for p in range(members.size) if p not in set(in_pair)]
    room = cfg.batch_size - len(keep)
    mined = mined[:max(room, 0)]
    spare = spare[:max(room - len(mined), 0)]
    new_members = [int(v) for v in members if int(v) in set(keep) | set(spare)] + mined
    return _finalize(new_members, dataset, plan.seed, mined)


def _incident(pairs):
    inc: dict[int, list[int]] = {}
    for idx, (a, b) in enumerate(pairs):
        inc.setdefault(a, []).append(idx)
        inc.setdefault(b, []).append(idx)
    return inc


def subsample_negative_pairs(P, N, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Uniformly draw min(|N|, |P|) negative pairs, repaired so every positive pair keeps an incident negative.

    A positive pair (i, j) is covered by a negative pair sharing i or j. Each
    uncovered pair swaps in one of its incident negatives in place of a drawn
    negative whose removal uncovers nothing.
    """
    P = [tuple(p) for p in P]
    N = [tuple(n) for n in N]
    if len(N) <= len(P):
        return list(N)
    draw = set(int(v) for v in rng.choice(len(N), size=len(P), replace=False))
    neg_at = _incident(N)
    pos_at = _incident(P)
    count: dict[int, int] = {}
    for idx in draw:
        for e in N[idx]:
            count[e] = count.get(e, 0) + 1

    def redundant(idx):
        # removing N[idx] must leave every positive pair it touches covered
        a, b = N[idx]
        after = lambda e: count.get(e, 0) - (e == a) - (e == b)  # noqa: E731
        for pi in set(pos_at.get(a, [])) | set(pos_at.get(b, [])):
            u, v = P[pi]
            if after(u) <= 0 and after(v) <= 0:
                return False
        return True

    for i, j in P:
        if count.get(i, 0) or count.get(j, 0):
            continue
        options = sorted(set(neg_at.get(i, [])) | set(neg_at.get(j, [])))
        if not options:
            continue  # nothing incident exists at all; the loss will report it
        add = options[int(rng.integers(len(options)))]
        # a redundant negative always exists here: otherwise each of the |P| drawn
        # negatives would be the sole cover of a distinct positive pair
        candidates = [idx for idx in sorted(draw) if redundant(idx)]
        drop = candidates[int(rng.integers(len(candidates)))]
        for e in N[drop]:
            count[e] -= 1
        for e in N[add]:
            count[e] = count.get(e, 0) + 1
        draw = (draw - {drop}) | {add}
    return [N[idx] for idx in sorted(draw)]


def covers_all_positives(P, N) -> bool:
    touched = {e for pair in N for e in pair}
    return all(i in touched or j in touched for i, j in P)


# ---------------------------------------------------------------------------
# baseline batches


def plan_contrastive_batch(dataset: LabeledDataset, batch_size: int, rng: np.random.Generator):
    """m/2 disjoint pairs, alternating positive and negative; returns (rows, pairing)."""
    if batch_size % 2:
        raise ValidationError(f"contrastive batches need an even size, got {batch_size}")
    index = dataset.class_index
    multi = [c for c, rows in index.items() if rows.size >= 2]
    classes = sorted(index)
    if not multi or len(classes) < 2:
        raise SamplingError("contrastive batches need 2 classes and one class with 2 examples")
    used: set[int] = set()
    rows, pairing = [], []

    def take(c, n):
        free = [int(r) for r in index[c] if int(r) not in used]
        if len(free) < n:
            return None
        pick = [free[int(t)] for t in rng.choice(len(free), size=n, replace=False)]
        used.update(pick)
        return pick

    attempts = 0
    while len(rows) < batch_size:
        attempts += 1
        if attempts > 100 * batch_size:
            raise SamplingError("dataset too small for the requested contrastive batch")
        positive = (len(pairing) % 2 == 0)
        if positive:
            chosen = take(multi[int(rng.integers(len(multi)))], 2)
        else:
            a, b = rng.choice(len(classes), size=2, replace=False)
            first = take(classes[a], 1)
            second = take(classes[b], 1) if first else None
            if first and not second:
                used.discard(first[0])
            chosen = first + second if (first and second) else None
        if chosen is None:
            continue
        pairing.append((len(rows), len(rows) + 1, int(positive)))
        rows += chosen
    return np.array(rows, dtype=np.int64), pairing


def plan_triplet_batch(dataset: LabeledDataset, batch_size: int, rng: np.random.Generator):
    """m/3 (anchor, positive, negative) triples laid out consecutively; returns rows."""
    if batch_size % 3:
        raise ValidationError(f"triplet batches need a size divisible by 3, got {batch_size}")
    index = dataset.class_index
    multi = [c for c, rows in index.items() if rows.size >= 2]
    classes = sorted(index)
    if not multi or len(classes) < 2:
        raise SamplingError("triplet batches need 2 classes and one class with 2 examples")
    rows = []
    for _ in range(batch_size // 3):
        c = multi[int(rng.integers(len(multi)))]
        a, p = rng.choice(index[c], size=2, replace=False)
        others = [o for o in classes if o != c]
        o = others[int(rng.integers(len(others)))]
        n = index[o][int(rng.integers(index[o].size))]
        rows += [int(a), int(p), int(n)]
    return np.array(rows, dtype=np.int64)
