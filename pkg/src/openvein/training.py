"""Balanced P x K mini-batch sampling and a toy trainable linear embedding
head, used to exercise the metric losses end-to-end at desk scale.

The head is a single linear map followed by row normalization, trained with
plain full-gradient descent per batch. It stands in for a deep backbone so
the loss/sampler/pipeline machinery can be validated without one.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .collection import EmbeddingCollection
from .core import ClassId, ZERO_NORM_THRESHOLD
from .errors import NonFiniteLossError, TooFewClassesError, ZeroNormError
from .losses import (
    CenterConfig,
    LabeledBatch,
    TripletConfig,
    batch_hard_triplet_gradient,
    batch_hard_triplet_loss,
    center_gradient,
    center_loss,
    contrastive_gradient,
    contrastive_loss,
)

LOSS_TRIPLET = "triplet"
LOSS_TRIPLET_CENTER = "triplet_center"
LOSS_CONTRASTIVE = "contrastive"
LOSS_CHOICES = (LOSS_TRIPLET, LOSS_TRIPLET_CENTER, LOSS_CONTRASTIVE)


@dataclass(frozen=True)
class SamplerConfig:
    P: int = 16     # identities per batch
    K: int = 4      # samples per identity
    seed: int = 0

    def __post_init__(self):
        if self.P < 2:
            raise ValueError(f"P must be >= 2, got {self.P}")
        if self.K < 2:
            raise ValueError(f"K must be >= 2, got {self.K}")


def pk_sample(dataset: EmbeddingCollection, cfg: SamplerConfig) -> list[LabeledBatch]:
    """One epoch of balanced batches: P distinct labels x K samples each.

    Classes with fewer than K samples are drawn with replacement. Every class
    appears in at least one batch per epoch; a short final chunk is topped up
    with extra classes so each batch has exactly P distinct labels. The batch
    sequence is a pure function of (dataset, cfg.seed).
    """
    classes = sorted(set(dataset.labels))
    if len(classes) < cfg.P:
        raise TooFewClassesError(
            f"sampler needs >= {cfg.P} classes, dataset has {len(classes)}"
        )
    rows_by_class = {c: dataset.rows_for_class(c) for c in classes}
    rng = np.random.default_rng(cfg.seed)
    order = [classes[i] for i in rng.permutation(len(classes))]

    chunks: list[list[ClassId]] = [
        order[i : i + cfg.P] for i in range(0, len(order), cfg.P)
    ]
    if len(chunks[-1]) < cfg.P:
        shortfall = cfg.P - len(chunks[-1])
        others = [c for c in classes if c not in set(chunks[-1])]
        extra_idx = rng.choice(len(others), size=shortfall, replace=False)
        chunks[-1] = chunks[-1] + [others[i] for i in sorted(extra_idx)]

    batches: list[LabeledBatch] = []
    for chunk in chunks:
        row_indices: list[int] = []
        labels: list[ClassId] = []
        for c in chunk:
            rows = rows_by_class[c]
            picked = rng.choice(len(rows), size=cfg.K, replace=len(rows) < cfg.K)
            row_indices.extend(int(rows[i]) for i in picked)
            labels.extend([c] * cfg.K)
        batches.append(
            LabeledBatch(
                vectors=dataset.vectors[row_indices],
                labels=tuple(labels),
                normalized=dataset.normalized,
            )
        )
    return batches


@dataclass(frozen=True)
class ToyHead:
    """Linear map whose normalized output is the embedding: z = Wx / ||Wx||."""

    weight: np.ndarray        # (D_out, D_in)
    learning_rate: float
    epochs: int
    seed: int = 0

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ValueError(f"weight must be (D_out, D_in), got {weight.shape}")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        weight.setflags(write=False)
        object.__setattr__(self, "weight", weight)

    @classmethod
    def initialize(
        cls,
        dim_in: int,
        dim_out: int,
        learning_rate: float,
        epochs: int,
        seed: int = 0,
    ) -> "ToyHead":
        """Gaussian init scaled by 1/sqrt(D_in)."""
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((dim_out, dim_in)) / np.sqrt(dim_in)
        return cls(weight=weight, learning_rate=learning_rate, epochs=epochs, seed=seed)

    @property
    def dim_in(self) -> int:
        return int(self.weight.shape[1])

    @property
    def dim_out(self) -> int:
        return int(self.weight.shape[0])

    def embed(self, vectors: np.ndarray) -> np.ndarray:
        """Map raw feature rows to unit-norm embeddings."""
        u = np.asarray(vectors, dtype=np.float64) @ self.weight.T
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if np.any(norms < ZERO_NORM_THRESHOLD):
            raise ZeroNormError("head output collapsed to (near) zero norm")
        return u / norms


def _loss_and_embedding_grad(
    loss: str,
    batch: LabeledBatch,
    triplet_cfg: TripletConfig,
    center_cfg: CenterConfig,
    centers: dict[ClassId, np.ndarray] | None,
) -> tuple[float, np.ndarray]:
    if loss == LOSS_TRIPLET:
        value, _ = batch_hard_triplet_loss(batch, triplet_cfg)
        return value, batch_hard_triplet_gradient(batch, triplet_cfg)
    if loss == LOSS_TRIPLET_CENTER:
        assert centers is not None
        value, _ = batch_hard_triplet_loss(batch, triplet_cfg)
        value += center_cfg.weight * center_loss(batch, centers)
        grad = batch_hard_triplet_gradient(batch, triplet_cfg)
        grad = grad + center_cfg.weight * center_gradient(batch, centers)
        return value, grad
    if loss == LOSS_CONTRASTIVE:
        return (
            contrastive_loss(batch, triplet_cfg.margin),
            contrastive_gradient(batch, triplet_cfg.margin),
        )
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_CHOICES}")


def _class_centers(
    head: ToyHead, features: EmbeddingCollection
) -> dict[ClassId, np.ndarray]:
    """Normalized per-class means of the current embeddings."""
    embedded = head.embed(features.vectors)
    centers: dict[ClassId, np.ndarray] = {}
    for c in sorted(set(features.labels)):
        rows = features.rows_for_class(c)
        mean = embedded[rows].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < ZERO_NORM_THRESHOLD:
            raise ZeroNormError(f"class {c!r}: embedded center collapsed to zero")
        centers[c] = mean / norm
    return centers


def train_toy_head(
    features: EmbeddingCollection,
    head: ToyHead,
    loss: str = LOSS_TRIPLET,
    sampler: SamplerConfig = SamplerConfig(),
    triplet_cfg: TripletConfig | None = None,
    center_cfg: CenterConfig = CenterConfig(),
) -> tuple[ToyHead, list[float]]:
    """Gradient descent on the chosen loss through the linear map and
    normalization. Returns (trained head, per-epoch mean loss trace).

    The epoch batch list is sampled once from ``sampler.seed`` and reused
    every epoch, so a zero learning rate yields an exactly flat trace.
    Center-loss centers are recomputed from the current embeddings once per
    epoch and held fixed within it.
    """
    if loss not in LOSS_CHOICES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_CHOICES}")
    if not np.all(np.isfinite(features.vectors)):
        raise NonFiniteLossError("features contain non-finite values")
    batches = pk_sample(features, sampler)
    triplet_cfg = triplet_cfg or TripletConfig()

    weight = head.weight.copy()
    trace: list[float] = []
    for _ in range(head.epochs):
        centers = None
        if loss == LOSS_TRIPLET_CENTER:
            centers = _class_centers(replace(head, weight=weight), features)
        epoch_losses: list[float] = []
        for batch in batches:
            x = batch.vectors
            u = x @ weight.T                       # (N, D_out)
            norms = np.linalg.norm(u, axis=1, keepdims=True)
            if np.any(norms < ZERO_NORM_THRESHOLD):
                raise NonFiniteLossError("head output collapsed to zero norm")
            y = u / norms

            embedded = LabeledBatch(vectors=y, labels=batch.labels)
            value, grad_y = _loss_and_embedding_grad(
                loss, embedded, triplet_cfg, center_cfg, centers
            )
            if not np.isfinite(value):
                raise NonFiniteLossError(f"loss diverged to {value!r}")
            epoch_losses.append(value)

            # Back through normalization: g_u = (g_y - (g_y . y) y) / ||u||
            g_u = (grad_y - np.sum(grad_y * y, axis=1, keepdims=True) * y) / norms
            grad_w = g_u.T @ x                     # (D_out, D_in)
            weight = weight - head.learning_rate * grad_w
            if not np.all(np.isfinite(weight)):
                raise NonFiniteLossError("weights diverged to non-finite values")
        trace.append(float(np.mean(epoch_losses)))
    return replace(head, weight=weight), trace
