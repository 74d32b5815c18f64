"""End-to-end finite-difference checks of loss + network gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingBatch, pairwise_sq_distances
from .losses import (
    COINCIDENT_EPS,
    LossConfig,
    TripletBatch,
    evaluate_loss,
    lifted_terms_nonsmooth,
    lifted_terms_smooth,
    random_contrastive_pairing,
)
from .model import MlpSpec, backward, forward, init_params

BREAKPOINT_EPS = 1e-4
# a block's error is scaled by max(block magnitude, ZERO_BLOCK_FRACTION * largest
# magnitude over all blocks); blocks with an identically zero gradient (e.g. the
# last bias, since distances are translation invariant) then compare round-off
# against the overall gradient scale instead of against zero
ZERO_BLOCK_FRACTION = 1e-3
TINY = 1e-12


@dataclass
class GradCheckReport:
    loss: str
    errors: dict[str, float] = field(default_factory=dict)  # block -> max relative error
    tolerance: float = 1e-5
    status: str = "pass"  # pass | fail | inconclusive
    attempts: int = 1
    breakpoint_gap: float = np.inf

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def line(self) -> str:
        return f"{self.status.upper():12s} {self.loss:17s} max_rel_err={self.max_error:.3e} tol={self.tolerance:g} attempts={self.attempts}"


def _mag(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


def relative_error(analytic: np.ndarray, numeric: np.ndarray, global_scale: float = 0.0) -> float:
    diff = _mag(analytic - numeric)
    scale = max(_mag(analytic), _mag(numeric), ZERO_BLOCK_FRACTION * global_scale, TINY)
    return diff / scale


def breakpoint_gap(loss: str, batch: EmbeddingBatch, cfg: LossConfig, pairing=None, triplets=None) -> float:
    """Distance (in loss-argument units) from the nearest non-smooth point of ``loss``."""
    D = pairwise_sq_distances(batch)
    alpha = cfg.margin_alpha
    X = batch.features
    if loss == "contrastive":
        pairing = pairing if pairing is not None else random_contrastive_pairing(batch.labels)
        gaps = [np.inf]
        for i, j, y in pairing:
            if not y:
                d = D.dist[i, j]
                gaps += [abs(alpha - d), d]
        return float(min(gaps))
    if loss == "triplet":
        t = triplets if triplets is not None else TripletBatch.from_partition(batch.m)
        h = (np.sum((X[t.anchors] - X[t.positives]) ** 2, axis=1)
             - np.sum((X[t.anchors] - X[t.negatives]) ** 2, axis=1) + alpha)
        return float(np.abs(h).min())
    if loss == "lifted-smooth":
        terms = lifted_terms_smooth(D, batch.labels, cfg)
        used = D.dist[np.triu(np.ones_like(D.dist, dtype=bool), 1)]
        return float(min(np.abs(terms.J).min(), used.min()))
    if loss == "lifted-nonsmooth":
        terms, *_ = lifted_terms_nonsmooth(D, batch.labels, cfg)
        neg = batch.labels[:, None] != batch.labels[None, :]
        margin = np.where(neg, alpha - D.dist, -np.inf)
        gaps = [np.abs(terms.J).min(), D.dist[terms.pairs_i, terms.pairs_j].min()]
        for i, j in zip(terms.pairs_i, terms.pairs_j):
            cand = np.sort(np.concatenate([margin[i][neg[i]], margin[j][neg[j]]]))[::-1]
            if cand.size > 1:
                # the same distance can appear from both sides only if i or j coincide, never here
                gaps.append(cand[0] - cand[1])
        dist_neg = D.dist[neg]
        gaps.append(dist_neg.min())
        return float(min(gaps))
    raise ValueError(f"unknown loss {loss!r}")


def _loss_value(loss, spec, params, inputs, labels, cfg, pairing, triplets):
    emb = forward(spec, params, inputs)
    return evaluate_loss(loss, EmbeddingBatch(emb, labels), cfg, pairing=pairing, triplets=triplets).value


def gradient_check(loss: str, inputs: np.ndarray, labels: np.ndarray, spec: MlpSpec, params: dict,
                   h: float = 1e-6, tolerance: float = 1e-5, cfg: LossConfig = LossConfig(),
                   pairing=None, triplets=None, rng: np.random.Generator | None = None,
                   retries: int = 5, check_inputs: bool = True) -> GradCheckReport:
    """Compare backprop gradients with central differences for every parameter block.

    Batches within ``BREAKPOINT_EPS`` of a hinge/max breakpoint (measured on the
    embeddings) are jittered and retried; if that keeps failing the report is
    marked inconclusive. A block passes when its error is strictly below
    ``tolerance``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    inputs = np.array(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    report = GradCheckReport(loss=loss, tolerance=tolerance)
    for attempt in range(1, retries + 2):
        emb = forward(spec, params, inputs)
        batch = EmbeddingBatch(emb, labels)
        gap = breakpoint_gap(loss, batch, cfg, pairing, triplets)
        report.attempts, report.breakpoint_gap = attempt, gap
        if gap >= BREAKPOINT_EPS:
            break
        inputs = inputs + rng.normal(scale=1e-2, size=inputs.shape)
    else:
        report.status = "inconclusive"
        return report

    emb, cache = forward(spec, params, inputs, return_cache=True)
    out = evaluate_loss(loss, EmbeddingBatch(emb, labels), cfg, pairing=pairing, triplets=triplets)
    grads, grad_in = backward(spec, params, cache, out.grad)

    def numeric(array, f):
        g = np.zeros_like(array)
        it = np.nditer(array, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = array[idx]
            array[idx] = old + h
            up = f()
            array[idx] = old - h
            down = f()
            array[idx] = old
            g[idx] = (up - down) / (2 * h)
        return g

    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    value = lambda: _loss_value(loss, spec, work, inputs, labels, cfg, pairing, triplets)  # noqa: E731
    pairs = {name: (grads[name], numeric(work[name], value)) for name in sorted(work)}
    if check_inputs:
        pairs["inputs"] = (grad_in, numeric(inputs, value))
    global_scale = max(max(_mag(a), _mag(n)) for a, n in pairs.values())
    for name, (a, n) in pairs.items():
        report.errors[name] = relative_error(a, n, global_scale)
    report.status = "pass" if report.max_error < tolerance else "fail"
    return report


def random_check_case(loss: str, rng: np.random.Generator, m_range=(6, 16), c_range=(2, 8),
                      input_dim: int = 4, hidden: int = 6):
    """Random (inputs, labels, spec, params) whose batch satisfies ``loss``'s preconditions."""
    c = int(rng.integers(c_range[0], c_range[1] + 1))
    if loss == "contrastive":
        m = int(rng.choice([v for v in range(m_range[0], m_range[1] + 1) if v % 2 == 0]))
        labels = rng.integers(0, 3, size=m)
        # alternate positive and negative pairs
        for p in range(m // 2):
            a, b = 2 * p, 2 * p + 1
            labels[b] = labels[a] if p % 2 == 0 else (labels[a] + 1 + rng.integers(0, 2)) % 3
    elif loss == "triplet":
        m = int(rng.choice([v for v in range(m_range[0], m_range[1] + 1) if v % 3 == 0]))
        labels = np.empty(m, dtype=np.int64)
        for t in range(m // 3):
            y = rng.integers(0, 4)
            labels[3 * t:3 * t + 2] = y
            labels[3 * t + 2] = (y + 1 + rng.integers(0, 3)) % 4
    else:
        m = int(rng.integers(m_range[0], m_range[1] + 1))
        n_cls = int(rng.integers(2, max(3, m // 2) + 1))
        labels = rng.integers(0, n_cls, size=m)
        labels[0] = labels[1]
        if np.all(labels == labels[0]):
            labels[-1] = labels[0] + 1
    spec = MlpSpec((input_dim, hidden, c), ("tanh",), init_seed=int(rng.integers(2**31)))
    params = init_params(spec)
    inputs = rng.normal(size=(m, input_dim))
    return inputs, labels, spec, params
