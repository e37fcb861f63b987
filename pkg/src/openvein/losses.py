"""Metric-learning losses over labeled batches, with analytic gradients.

Batch-hard mining selects, per anchor, the farthest same-class sample and the
nearest different-class sample; the hinge on their distance gap (margin 0.3
by default) is averaged over all anchors. Ties in the argmax/argmin resolve
to the lowest sample index, and hinge kinks take subgradient 0, so loss and
gradient are deterministic functions of the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import ClassId
from .errors import (
    DimensionMismatchError,
    InsufficientPositivesError,
    MissingCenterError,
    SingleClassError,
    SingleSampleError,
)

EUCLIDEAN = "euclidean"
SQUARED_EUCLIDEAN = "squared_euclidean"

DEFAULT_MARGIN = 0.3


@dataclass(frozen=True)
class LabeledBatch:
    """A mini-batch of feature vectors with one class label per row."""

    vectors: np.ndarray            # (N, D) float64
    labels: tuple[ClassId, ...]
    normalized: bool = True        # False for raw pre-normalization features

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatchError(f"batch must be (N, D), got {vectors.shape}")
        if len(self.labels) != vectors.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.labels)} labels for {vectors.shape[0]} rows"
            )
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple(self.labels))

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class TripletConfig:
    margin: float = DEFAULT_MARGIN
    distance: str = EUCLIDEAN

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")
        if self.distance not in (EUCLIDEAN, SQUARED_EUCLIDEAN):
            raise ValueError(f"unknown distance {self.distance!r}")


@dataclass(frozen=True)
class CenterConfig:
    """Weight blending the center term into triplet + weight * center."""

    weight: float = 0.01

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"center weight must be >= 0, got {self.weight}")


def pairwise_distances(batch: LabeledBatch, distance: str = EUCLIDEAN) -> np.ndarray:
    """(N, N) matrix of pairwise distances between batch rows.

    Distances are computed from explicit coordinate differences (not the
    Gram-matrix identity), which keeps the matrix exactly symmetric with an
    exactly zero diagonal.
    """
    if distance not in (EUCLIDEAN, SQUARED_EUCLIDEAN):
        raise ValueError(f"unknown distance {distance!r}")
    x = batch.vectors
    diff = x[:, None, :] - x[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if distance == SQUARED_EUCLIDEAN:
        return sq
    return np.sqrt(sq)


def _label_masks(batch: LabeledBatch) -> tuple[np.ndarray, np.ndarray]:
    """(positive_mask, negative_mask); positives exclude the anchor itself."""
    labels = np.asarray(batch.labels, dtype=object)
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(len(batch), dtype=bool)
    negative = ~same
    return positive, negative


def _check_batch_hard_preconditions(batch: LabeledBatch) -> None:
    labels = batch.labels
    if len(set(labels)) < 2:
        raise SingleClassError("batch-hard mining needs >= 2 distinct labels")
    counts: dict[ClassId, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    singletons = sorted(label for label, n in counts.items() if n < 2)
    if singletons:
        raise InsufficientPositivesError(
            f"labels with a single sample have no positives: {singletons}"
        )


def _mine_hardest(batch: LabeledBatch, cfg: TripletConfig):
    """Per-anchor hardest positive/negative indices and the hinge values."""
    dist = pairwise_distances(batch, cfg.distance)
    positive, negative = _label_masks(batch)
    n = len(batch)

    # np.argmax/argmin on masked copies return the first (lowest-index) winner.
    pos_dist = np.where(positive, dist, -np.inf)
    hardest_pos = np.argmax(pos_dist, axis=1)
    neg_dist = np.where(negative, dist, np.inf)
    hardest_neg = np.argmin(neg_dist, axis=1)

    anchors = np.arange(n)
    gap = dist[anchors, hardest_pos] - dist[anchors, hardest_neg] + cfg.margin
    per_anchor = np.maximum(gap, 0.0)
    return dist, hardest_pos, hardest_neg, per_anchor


def batch_hard_triplet_loss(
    batch: LabeledBatch, cfg: TripletConfig = TripletConfig()
) -> tuple[float, np.ndarray]:
    """Batch-hard triplet loss: mean over anchors of
    max(0, d(a, hardest positive) - d(a, hardest negative) + margin).

    Returns (loss, per-anchor hinge values). The loss is zero exactly when
    every anchor's nearest negative is at least ``margin`` farther than its
    farthest positive.
    """
    _check_batch_hard_preconditions(batch)
    _, _, _, per_anchor = _mine_hardest(batch, cfg)
    return float(np.mean(per_anchor)), per_anchor


def batch_hard_triplet_gradient(
    batch: LabeledBatch, cfg: TripletConfig = TripletConfig()
) -> np.ndarray:
    """(N, D) gradient of batch_hard_triplet_loss w.r.t. the batch vectors.

    The mined indices are treated as constants (exact almost everywhere);
    hinge kinks and zero-distance pairs contribute subgradient 0.
    """
    _check_batch_hard_preconditions(batch)
    dist, hardest_pos, hardest_neg, per_anchor = _mine_hardest(batch, cfg)
    x = batch.vectors
    n = len(batch)
    grad = np.zeros_like(x)

    def add_distance_grad(i: int, j: int, scale: float) -> None:
        # d/dx of the chosen distance between rows i and j, times scale,
        # accumulated into both endpoints.
        diff = x[i] - x[j]
        if cfg.distance == SQUARED_EUCLIDEAN:
            g = 2.0 * scale * diff
        else:
            d = dist[i, j]
            if d == 0.0:
                return  # subgradient 0 at coincident points
            g = (scale / d) * diff
        grad[i] += g
        grad[j] -= g

    for a in range(n):
        if per_anchor[a] <= 0.0:
            continue  # hinge inactive or exactly at the kink
        add_distance_grad(a, int(hardest_pos[a]), 1.0 / n)
        add_distance_grad(a, int(hardest_neg[a]), -1.0 / n)
    return grad


def contrastive_loss(batch: LabeledBatch, margin: float = DEFAULT_MARGIN) -> float:
    """Margin-hinged contrastive loss, averaged over all unordered pairs.

    Same-label pairs contribute d^2, different-label pairs max(0, margin - d)^2,
    with d the Euclidean distance.
    """
    if len(batch) < 2:
        raise SingleSampleError("contrastive loss needs >= 2 samples")
    dist = pairwise_distances(batch, EUCLIDEAN)
    positive, negative = _label_masks(batch)
    iu = np.triu_indices(len(batch), k=1)
    d = dist[iu]
    same = positive[iu]
    terms = np.where(same, d * d, np.square(np.maximum(margin - d, 0.0)))
    return float(np.mean(terms))


def contrastive_gradient(batch: LabeledBatch, margin: float = DEFAULT_MARGIN) -> np.ndarray:
    """(N, D) gradient of contrastive_loss w.r.t. the batch vectors."""
    if len(batch) < 2:
        raise SingleSampleError("contrastive loss needs >= 2 samples")
    x = batch.vectors
    n = len(batch)
    dist = pairwise_distances(batch, EUCLIDEAN)
    positive, _ = _label_masks(batch)
    n_pairs = n * (n - 1) // 2
    grad = np.zeros_like(x)
    for i in range(n):
        for j in range(i + 1, n):
            diff = x[i] - x[j]
            if positive[i, j]:
                g = 2.0 * diff / n_pairs
            else:
                d = dist[i, j]
                if d >= margin or d == 0.0:
                    continue  # hinge inactive, or subgradient 0 at d == 0
                g = (-2.0 * (margin - d) / d) * diff / n_pairs
            grad[i] += g
            grad[j] -= g
    return grad


def center_loss(batch: LabeledBatch, centers: Mapping[ClassId, np.ndarray]) -> float:
    """Half mean squared distance of each sample to its class center:
    (1 / 2N) * sum_i ||x_i - c_{y_i}||^2."""
    missing = sorted({label for label in batch.labels if label not in centers})
    if missing:
        raise MissingCenterError(f"labels without a center: {missing}")
    x = batch.vectors
    c = np.stack([np.asarray(centers[label], dtype=np.float64) for label in batch.labels])
    if c.shape != x.shape:
        raise DimensionMismatchError(
            f"centers shape {c.shape} does not match batch shape {x.shape}"
        )
    return float(np.sum((x - c) ** 2) / (2 * len(batch)))


def center_gradient(
    batch: LabeledBatch, centers: Mapping[ClassId, np.ndarray]
) -> np.ndarray:
    """(N, D) gradient of center_loss w.r.t. the batch vectors (centers fixed)."""
    missing = sorted({label for label in batch.labels if label not in centers})
    if missing:
        raise MissingCenterError(f"labels without a center: {missing}")
    x = batch.vectors
    c = np.stack([np.asarray(centers[label], dtype=np.float64) for label in batch.labels])
    return (x - c) / len(batch)
