"""Synthetic hypersphere-cluster data: seeded stand-in for real embedding
datasets, with subject grouping so subject-disjoint protocols are nontrivial.

Class means are drawn uniformly on the unit sphere; each sample is the mean
plus isotropic Gaussian noise, re-normalized. Raw (pre-normalization) feature
variants provide inputs for the toy trainable head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collection import EmbeddingCollection


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int
    dim: int
    samples_per_class: int
    noise_sigma: float
    raw_feature_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.samples_per_class < 2:
            raise ValueError(
                f"samples_per_class must be >= 2, got {self.samples_per_class}"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.raw_feature_dim is not None and self.raw_feature_dim < 2:
            raise ValueError(f"raw_feature_dim must be >= 2, got {self.raw_feature_dim}")


def _class_label(i: int) -> str:
    return f"c{i:04d}"


def _subject_label(class_index: int) -> str:
    # Two classes per subject (mimicking left/right anatomical instances).
    return f"s{class_index // 2:04d}"


def generate_clusters(cfg: SynthConfig) -> EmbeddingCollection:
    """Unit-norm embedding clusters, class-major row order, seeded.

    sample = normalize(class_mean + noise_sigma * standard_normal).
    """
    rng = np.random.default_rng(cfg.seed)
    rows = np.empty((cfg.num_classes * cfg.samples_per_class, cfg.dim))
    labels: list[str] = []
    subjects: list[str] = []
    for ci in range(cfg.num_classes):
        mean = rng.standard_normal(cfg.dim)
        mean /= np.linalg.norm(mean)
        for si in range(cfg.samples_per_class):
            v = mean + cfg.noise_sigma * rng.standard_normal(cfg.dim)
            rows[ci * cfg.samples_per_class + si] = v / np.linalg.norm(v)
            labels.append(_class_label(ci))
            subjects.append(_subject_label(ci))
    return EmbeddingCollection(
        vectors=rows, labels=tuple(labels), subjects=tuple(subjects), normalized=True
    )


def generate_raw_features(cfg: SynthConfig) -> EmbeddingCollection:
    """Raw pre-normalization feature clusters for toy-head training.

    Row order, labels, and subjects mirror generate_clusters, so protocol
    sample references carry over. Noise is confined to a random subspace of
    rank raw_feature_dim // 4 (at least 2): a linear head can learn to
    suppress it, while a random head cannot, which keeps the pre/post
    training comparison informative.
    """
    if cfg.raw_feature_dim is None:
        raise ValueError("config has no raw_feature_dim")
    d = cfg.raw_feature_dim
    rng = np.random.default_rng([cfg.seed, 101])
    noise_rank = max(2, d // 4)
    basis, _ = np.linalg.qr(rng.standard_normal((d, noise_rank)))
    rows = np.empty((cfg.num_classes * cfg.samples_per_class, d))
    labels: list[str] = []
    subjects: list[str] = []
    for ci in range(cfg.num_classes):
        mean = rng.standard_normal(d)
        mean /= np.linalg.norm(mean)
        for si in range(cfg.samples_per_class):
            noise = basis @ rng.standard_normal(noise_rank)
            rows[ci * cfg.samples_per_class + si] = mean + cfg.noise_sigma * noise
            labels.append(_class_label(ci))
            subjects.append(_subject_label(ci))
    return EmbeddingCollection(
        vectors=rows, labels=tuple(labels), subjects=tuple(subjects), normalized=False
    )


def reference_config(seed: int = 17) -> SynthConfig:
    """The benchmark configuration used by the end-to-end checks:
    50 classes, dim 32, sigma 0.05, 10 samples per class."""
    return SynthConfig(
        num_classes=50, dim=32, samples_per_class=10, noise_sigma=0.05, seed=seed
    )


def toy_training_config(seed: int = 7) -> SynthConfig:
    """The 20-class problem for toy-head training: raw features in 48
    dimensions mapped down to 16-dimensional embeddings."""
    return SynthConfig(
        num_classes=20,
        dim=16,
        samples_per_class=10,
        noise_sigma=0.35,
        raw_feature_dim=48,
        seed=seed,
    )
