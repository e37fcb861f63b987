"""Labeled embedding collections: rows of feature vectors tagged with class,
optional subject, and optional session identifiers.

A collection is the in-memory twin of an embedding file. ``normalized=True``
means every row is a unit vector (an embedding); ``False`` means raw
pre-normalization features, e.g. inputs for the toy trainable head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClassId, UNIT_NORM_TOLERANCE
from .errors import DimensionMismatchError, NonFiniteValueError


@dataclass(frozen=True)
class EmbeddingCollection:
    vectors: np.ndarray                       # (N, D) float64
    labels: tuple[ClassId, ...]               # class id per row
    subjects: tuple[str, ...] | None = None   # subject id per row
    sessions: tuple[str, ...] | None = None   # session tag per row
    normalized: bool = True

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DimensionMismatchError(f"vectors must be (N, D), got {vectors.shape}")
        if vectors.shape[1] < 2:
            raise DimensionMismatchError(
                f"embedding dimension must be >= 2, got {vectors.shape[1]}"
            )
        if len(self.labels) != vectors.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.labels)} labels for {vectors.shape[0]} rows"
            )
        for name, tags in (("subjects", self.subjects), ("sessions", self.sessions)):
            if tags is not None and len(tags) != vectors.shape[0]:
                raise DimensionMismatchError(
                    f"{len(tags)} {name} for {vectors.shape[0]} rows"
                )
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteValueError("collection contains non-finite values")
        if self.normalized:
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
                worst = float(np.max(np.abs(norms - 1.0)))
                raise DimensionMismatchError(
                    f"collection flagged normalized but a row norm deviates by {worst:.3e}"
                )
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.subjects is not None:
            object.__setattr__(self, "subjects", tuple(self.subjects))
        if self.sessions is not None:
            object.__setattr__(self, "sessions", tuple(self.sessions))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def class_ids(self) -> tuple[ClassId, ...]:
        """Distinct class ids in first-occurrence order."""
        seen: dict[ClassId, None] = {}
        for label in self.labels:
            seen.setdefault(label, None)
        return tuple(seen)

    def rows_for_class(self, class_id: ClassId) -> np.ndarray:
        """Row indices carrying the given class label, in file order."""
        return np.array(
            [i for i, label in enumerate(self.labels) if label == class_id], dtype=int
        )

    def take(self, indices) -> "EmbeddingCollection":
        """Sub-collection of the given rows, preserving tags."""
        idx = np.asarray(indices, dtype=int)
        return EmbeddingCollection(
            vectors=self.vectors[idx],
            labels=tuple(self.labels[i] for i in idx),
            subjects=None if self.subjects is None else tuple(self.subjects[i] for i in idx),
            sessions=None if self.sessions is None else tuple(self.sessions[i] for i in idx),
            normalized=self.normalized,
        )

    def with_vectors(self, vectors: np.ndarray, normalized: bool) -> "EmbeddingCollection":
        """Same rows and tags, different feature vectors (e.g. after a head)."""
        return EmbeddingCollection(
            vectors=vectors,
            labels=self.labels,
            subjects=self.subjects,
            sessions=self.sessions,
            normalized=normalized,
        )
