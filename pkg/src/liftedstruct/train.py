"""Training loop: sampler -> network -> loss -> SGD."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .core import EmbeddingBatch, ValidationError, pair_sets
from .data import LabeledDataset
from .losses import LossConfig, contrastive_loss, lifted_loss_nonsmooth, lifted_loss_smooth, triplet_loss
from .model import MlpSpec, OptimizerState, backward, forward, init_params, last_layer_multipliers, sgd_step
from .sampler import (
    MiningConfig,
    mine_hard_negatives,
    plan_contrastive_batch,
    plan_random_batch,
    plan_triplet_batch,
    subsample_negative_pairs,
)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainResult:
    spec: MlpSpec
    params: dict
    losses: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    def log_csv(self, with_wall_time: bool = False) -> str:
        head = "iter,loss,wall_ms" if with_wall_time else "iter,loss"
        rows = [head]
        for it, v in enumerate(self.losses):
            row = f"{it},{v!r}"
            if with_wall_time:
                row += f",{self.wall_ms[it]:.3f}"
            rows.append(row)
        return "\n".join(rows) + "\n"


def build_spec(cfg: RunConfig, input_dim: int) -> MlpSpec:
    widths = (input_dim, *cfg.hidden_widths, cfg.embedding_dim)
    return MlpSpec(widths, cfg.activations, init_seed=cfg.init_seed, l2_normalize=cfg.l2_normalize)


def mining_config(cfg: RunConfig, n_rows: int) -> MiningConfig:
    m = cfg.effective_batch_size
    return MiningConfig(batch_size=m, negatives_per_positive_element=cfg.negatives_per_positive_element,
                        candidate_pool_size=max(m, min(cfg.candidate_pool_size, n_rows)), mode=cfg.mining_mode)


class BatchSource:
    """Yields (rows, loss-kwargs) per iteration for the configured loss."""

    def __init__(self, cfg: RunConfig, dataset: LabeledDataset, rng: np.random.Generator):
        self.cfg, self.dataset, self.rng = cfg, dataset, rng
        self.m = cfg.effective_batch_size
        self.mining = mining_config(cfg, len(dataset)) if cfg.loss.startswith("lifted") else None
        self.pool = None
        self.pool_emb = None
        self.epoch_len = max(1, len(dataset) // self.m)

    def refresh_pool(self, spec, params):
        n = len(self.dataset)
        size = min(self.mining.candidate_pool_size, n)
        self.pool = np.sort(self.rng.choice(n, size=size, replace=False))
        self.pool_emb = forward(spec, params, self.dataset.features[self.pool])

    def next(self, it: int, spec, params):
        loss = self.cfg.loss
        if loss == "contrastive":
            rows, pairing = plan_contrastive_batch(self.dataset, self.m, self.rng)
            return rows, {"pairing": pairing}
        if loss == "triplet":
            return plan_triplet_batch(self.dataset, self.m, self.rng), {}
        plan = plan_random_batch(self.dataset, self.mining, self.rng)
        if self.mining.mode == "pool-mined":
            if self.pool is None or it % self.epoch_len == 0:
                self.refresh_pool(spec, params)
            member_emb = forward(spec, params, self.dataset.features[plan.member_indices])
            plan = mine_hard_negatives(plan, self.dataset, self.pool, self.pool_emb, member_emb, self.mining)
        kwargs = {}
        if self.cfg.balance_negatives:
            P, N = pair_sets(self.dataset.labels[plan.member_indices])
            kwargs["negatives"] = subsample_negative_pairs(P, N, self.rng)
        return plan.member_indices, kwargs


def loss_and_grad(name: str, batch: EmbeddingBatch, lcfg: LossConfig, **kwargs):
    if name == "contrastive":
        return contrastive_loss(batch, kwargs["pairing"], lcfg)
    if name == "triplet":
        return triplet_loss(batch, None, lcfg)
    if name == "lifted-smooth":
        return lifted_loss_smooth(batch, lcfg, kwargs.get("negatives"))
    return lifted_loss_nonsmooth(batch, lcfg, kwargs.get("negatives"))


def train(cfg: RunConfig, dataset: LabeledDataset, spec: MlpSpec | None = None, params: dict | None = None) -> TrainResult:
    """Run SGD for ``cfg.max_iterations`` steps or until a batch loss drops below ``cfg.loss_floor``."""
    cfg.validate()
    spec = spec or build_spec(cfg, dataset.dim)
    if spec.input_dim != dataset.dim:
        raise ValidationError(f"network expects {spec.input_dim} input features, dataset has {dataset.dim}")
    params = params if params is not None else init_params(spec)
    mults = last_layer_multipliers(spec, cfg.last_layer_lr_mult) if cfg.last_layer_lr_mult != 1.0 else {}
    state = OptimizerState(cfg.learning_rate, cfg.momentum, max_iterations=cfg.max_iterations, lr_multipliers=mults)
    lcfg = LossConfig(cfg.margin_alpha)
    rng = np.random.default_rng(cfg.sampler_seed)
    source = BatchSource(cfg, dataset, rng)
    result = TrainResult(spec, params)

    start = time.perf_counter()
    for it in range(cfg.max_iterations):
        rows, kwargs = source.next(it, spec, params)
        emb, cache = forward(spec, params, dataset.features[rows], return_cache=True)
        out = loss_and_grad(cfg.loss, EmbeddingBatch(emb, dataset.labels[rows]), lcfg, **kwargs)
        if not np.isfinite(out.value):
            raise TrainingDiverged(f"non-finite loss at iteration {it}")
        grads, _ = backward(spec, params, cache, out.grad)
        params, state = sgd_step(params, grads, state)
        result.losses.append(out.value)
        result.wall_ms.append(1000.0 * (time.perf_counter() - start))
        if it % 1000 == 0:
            log.debug("iter %d loss %.6g", it, out.value)
        if out.value < cfg.loss_floor:
            break
    result.params = params
    return result


def embed(spec: MlpSpec, params: dict, features: np.ndarray, chunk: int = 4096) -> np.ndarray:
    parts = [forward(spec, params, features[s:s + chunk]) for s in range(0, features.shape[0], chunk)]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, spec.output_dim))
