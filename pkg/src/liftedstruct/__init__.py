"""Lifted structured feature embedding and its pair/triplet baselines, in numpy."""

from .core import EmbeddingBatch, ValidationError, pairwise_sq_distances
from .losses import (
    LossConfig,
    contrastive_loss,
    lifted_loss_nonsmooth,
    lifted_loss_smooth,
    triplet_loss,
)
from .metrics import evaluate_embeddings, kmeans, nmi, pairwise_f1, recall_at_k

__version__ = "0.1.0"

__all__ = [
    "EmbeddingBatch",
    "LossConfig",
    "ValidationError",
    "contrastive_loss",
    "evaluate_embeddings",
    "kmeans",
    "lifted_loss_nonsmooth",
    "lifted_loss_smooth",
    "nmi",
    "pairwise_f1",
    "pairwise_sq_distances",
    "recall_at_k",
    "triplet_loss",
]
