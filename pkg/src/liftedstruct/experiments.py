"""Desk-scale experiments: loss comparison on synthetic blobs and 2-D failure-mode geometry."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .core import EmbeddingBatch
from .data import SplitSpec, class_disjoint_split, make_blobs
from .losses import LossConfig, contrastive_loss, lifted_loss_smooth, triplet_loss, TripletBatch
from .metrics import evaluate_embeddings
from .train import embed, train


@dataclass(frozen=True)
class ComparisonSetup:
    num_classes: int = 40
    per_class: int = 20
    dim: int = 16
    center_scale: float = 1.0
    noise_sigma: float = 0.3
    hidden_widths: tuple[int, ...] = (32,)
    embedding_dim: int = 8
    max_iterations: int = 2000
    learning_rate: float = 0.01
    batch_size: int | None = None  # None -> per-loss default
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    losses: tuple[str, ...] = ("contrastive", "triplet", "lifted-smooth")
    overrides: dict = field(default_factory=dict)  # loss name -> extra RunConfig fields
    # when non-empty, each loss picks its learning rate from this grid by
    # validation Recall@1 on held-out training classes (see select_learning_rates)
    lr_grid: tuple[float, ...] = ()
    selection_seed: int = 0


@dataclass
class RunOutcome:
    loss: str
    seed: int
    recall_at_1: float
    nmi: float
    f1: float
    final_loss: float
    seconds: float


def run_config_for(setup: ComparisonSetup, loss: str, seed: int, learning_rate: float | None = None) -> RunConfig:
    lr = setup.learning_rate if learning_rate is None else learning_rate
    kw = dict(loss=loss, embedding_dim=setup.embedding_dim, hidden_widths=setup.hidden_widths,
              max_iterations=setup.max_iterations, learning_rate=lr, batch_size=setup.batch_size,
              data_seed=seed, init_seed=seed, sampler_seed=seed)
    kw.update(setup.overrides.get(loss, {}))
    return RunConfig(**kw)


def _blobs(setup: ComparisonSetup, seed: int):
    return make_blobs(setup.num_classes, setup.per_class, setup.dim, setup.center_scale, setup.noise_sigma, seed)


def run_one(setup: ComparisonSetup, loss: str, seed: int, learning_rate: float | None = None) -> RunOutcome:
    start = time.perf_counter()
    train_ds, test_ds = class_disjoint_split(_blobs(setup, seed))
    cfg = run_config_for(setup, loss, seed, learning_rate)
    result = train(cfg, train_ds)
    emb = embed(result.spec, result.params, test_ds.features)
    rep = evaluate_embeddings(emb, test_ds.labels, ks=(1,), seed=seed)
    return RunOutcome(loss, seed, rep.recall_at[1], rep.nmi, rep.f1, result.losses[-1],
                      time.perf_counter() - start)


def validation_recall(setup: ComparisonSetup, loss: str, learning_rate: float) -> float:
    """Recall@1 on training classes held out from a training run; the test classes are never touched."""
    seed = setup.selection_seed
    train_ds, _ = class_disjoint_split(_blobs(setup, seed))
    inner, held_out = class_disjoint_split(train_ds, SplitSpec(train_fraction_of_classes=0.6))
    result = train(run_config_for(setup, loss, seed, learning_rate), inner)
    emb = embed(result.spec, result.params, held_out.features)
    return evaluate_embeddings(emb, held_out.labels, ks=(1,), seed=seed).recall_at[1]


def select_learning_rates(setup: ComparisonSetup) -> dict[str, float]:
    """Per-loss learning rate with the best validation Recall@1; ties go to the smaller rate."""
    chosen = {}
    for loss in setup.losses:
        scores = [(validation_recall(setup, loss, lr), -lr) for lr in sorted(setup.lr_grid)]
        chosen[loss] = -max(scores)[1]
    return chosen


def run_comparison(setup: ComparisonSetup = ComparisonSetup(), progress=None,
                   learning_rates: dict[str, float] | None = None) -> list[RunOutcome]:
    """Train and evaluate every loss on every seed.

    ``learning_rates`` fixes per-loss rates; otherwise they come from
    ``select_learning_rates`` when ``setup.lr_grid`` is set, else
    ``setup.learning_rate`` is used for all losses.
    """
    if learning_rates is None and setup.lr_grid:
        learning_rates = select_learning_rates(setup)
    learning_rates = learning_rates or {}
    outcomes = []
    for loss in setup.losses:
        for seed in setup.seeds:
            out = run_one(setup, loss, seed, learning_rates.get(loss))
            outcomes.append(out)
            if progress is not None:
                progress(out)
    return outcomes


def summarize(outcomes: list[RunOutcome]) -> dict[str, dict[str, float]]:
    """Median Recall@1, NMI and F1 per loss."""
    table = {}
    for loss in dict.fromkeys(o.loss for o in outcomes):
        rows = [o for o in outcomes if o.loss == loss]
        table[loss] = {
            "recall_at_1": float(np.median([o.recall_at_1 for o in rows])),
            "nmi": float(np.median([o.nmi for o in rows])),
            "f1": float(np.median([o.f1 for o in rows])),
            "seconds": float(sum(o.seconds for o in rows)),
        }
    return table


def raw_feature_baseline(setup: ComparisonSetup) -> dict[str, float]:
    """Median test metrics with the untransformed input vectors as embeddings."""
    r1, nm = [], []
    for seed in setup.seeds:
        _, test_ds = class_disjoint_split(_blobs(setup, seed))
        rep = evaluate_embeddings(test_ds.features, test_ds.labels, ks=(1,), seed=seed)
        r1.append(rep.recall_at[1])
        nm.append(rep.nmi)
    return {"recall_at_1": float(np.median(r1)), "nmi": float(np.median(nm))}


def as_dict(setup: ComparisonSetup) -> dict:
    d = dataclasses.asdict(setup)
    d["hidden_widths"] = list(setup.hidden_widths)
    d["seeds"] = list(setup.seeds)
    d["losses"] = list(setup.losses)
    d["lr_grid"] = list(setup.lr_grid)
    return d


# The desk-scale comparison used by the acceptance test. Lifted training mines
# hard negatives from a candidate pool, the baselines sample tuples at random,
# and every loss gets its own learning rate picked on validation classes.
ACCEPTANCE_SETUP = ComparisonSetup(
    overrides={"lifted-smooth": {"mining_mode": "pool-mined"}},
    lr_grid=(0.003, 0.01, 0.03),
)


# ---------------------------------------------------------------------------
# failure-mode geometry in 2-D
#
# Three classes: the query's own class (brown), another class that supplies the
# randomly sampled negative (green), and a tight cluster (purple) lying on the
# opposite side of the query from that negative. Pair and triplet losses only
# see the sampled tuple, so they push the query away from the green negative and
# into the purple cluster; the lifted loss sees every negative in the batch.


@dataclass(frozen=True)
class FailureCase:
    name: str
    points: np.ndarray  # (m, 2)
    labels: np.ndarray
    query: int  # index of the point whose displacement is checked
    cluster: tuple[int, ...]  # indices of the hard-negative (purple) cluster
    pairing: tuple[tuple[int, int, int], ...] = ()  # contrastive tuple(s), over the whole batch indexing
    triplets: tuple[tuple[int, int, int], ...] = ()  # (anchor, positive, negative)

    @property
    def centroid(self) -> np.ndarray:
        return self.points[list(self.cluster)].mean(axis=0)


def failure_cases() -> list[FailureCase]:
    purple = [[0.45, 0.0], [0.42, 0.12], [0.42, -0.12]]
    brown, green, violet = 0, 1, 2
    cases = []

    # contrastive: query x_i, sampled negative x_j collinear with purple
    pts = np.array([[0.0, 0.0], [-0.6, 0.0], [0.0, 0.3]] + purple)
    lab = np.array([brown, green, brown, violet, violet, violet])
    cases.append(FailureCase("contrastive", pts, lab, 0, (3, 4, 5), pairing=((0, 1, 0),)))

    # triplet: anchor, positive, sampled negative inside the margin
    pts = np.array([[0.0, 0.0], [0.05, 0.35], [-0.5, 0.1]] + purple)
    lab = np.array([brown, brown, green, violet, violet, violet])
    cases.append(FailureCase("triplet", pts, lab, 0, (3, 4, 5), triplets=((0, 1, 2),)))

    # lifted: several hard negatives near the query, the purple ones closest
    pts = np.array([[0.0, 0.0], [0.0, 0.4], [-0.7, 0.05], [-0.65, -0.2], [0.38, 0.0], [0.36, 0.1],
                    [0.36, -0.1], [0.4, 0.2]])
    lab = np.array([brown, brown, green, green, violet, violet, violet, violet])
    cases.append(FailureCase("lifted", pts, lab, 0, (4, 5, 6, 7), pairing=((0, 2, 0),), triplets=((0, 1, 2),)))
    return cases


def _sub_batch(case: FailureCase, rows: list[int]) -> tuple[EmbeddingBatch, dict[int, int]]:
    where = {r: i for i, r in enumerate(rows)}
    return EmbeddingBatch(case.points[rows], case.labels[rows]), where


def step_displacement(case: FailureCase, method: str, learning_rate: float = 0.1,
                      cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Displacement of the query point after one gradient-descent step on the embeddings.

    The baselines are evaluated on the sampled tuple only (as in random pair or
    triplet sampling); the lifted loss is evaluated on the whole batch.
    """
    if method == "lifted-smooth":
        out = lifted_loss_smooth(EmbeddingBatch(case.points, case.labels), cfg)
        return -learning_rate * out.grad[case.query]
    if method == "contrastive":
        i, j, y = case.pairing[0]
        batch, where = _sub_batch(case, [i, j])
        out = contrastive_loss(batch, [(where[i], where[j], y)], cfg)
    elif method == "triplet":
        a, p, n = case.triplets[0]
        batch, where = _sub_batch(case, [a, p, n])
        out = triplet_loss(batch, TripletBatch([where[a]], [where[p]], [where[n]]), cfg)
    else:
        raise ValueError(f"unknown method {method!r}")
    return -learning_rate * out.grad[where[case.query]]


def away_component(case: FailureCase, displacement: np.ndarray) -> float:
    """Component of ``displacement`` along the unit vector from the cluster centroid to the query."""
    direction = case.points[case.query] - case.centroid
    return float(displacement @ direction / np.linalg.norm(direction))


def baselines_for(case: FailureCase) -> tuple[str, ...]:
    return tuple(m for m, present in (("contrastive", case.pairing), ("triplet", case.triplets)) if present)
