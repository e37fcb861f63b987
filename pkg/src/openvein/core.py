"""Unit-hypersphere embedding geometry: normalization, cosine similarity,
class prototypes, and the enrolled gallery.

All arithmetic is done in float64 regardless of file storage precision, and
every operation here is a pure function over immutable inputs, so the module
is safe to use from concurrent workers without coordination.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateClassError,
    EmptyEnrollmentError,
    EmptyGalleryError,
    ZeroNormError,
)

ClassId = str

#: Norms below this are treated as degenerate feature output.
ZERO_NORM_THRESHOLD = 1e-12

#: Constructed prototypes/galleries must be unit-norm within this tolerance.
UNIT_NORM_TOLERANCE = 1e-6


def _as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DimensionMismatchError(f"{name} needs dimension >= 2, got {arr.shape[0]}")
    return arr


def normalize(v) -> np.ndarray:
    """Project a raw feature vector onto the unit hypersphere.

    Raises ZeroNormError when the Euclidean norm is below 1e-12, which
    signals degenerate feature output rather than a recoverable condition.
    """
    arr = _as_vector(v)
    norm = float(np.linalg.norm(arr))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroNormError(f"vector norm {norm:.3e} below {ZERO_NORM_THRESHOLD:.0e}")
    return arr / norm


def is_unit(v, tol: float = UNIT_NORM_TOLERANCE) -> bool:
    """True when ||v|| is within ``tol`` of 1."""
    return abs(float(np.linalg.norm(np.asarray(v, dtype=np.float64))) - 1.0) <= tol


def cosine_similarity(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1].

    The clamp absorbs the ~1e-16 rounding overshoot possible when both
    inputs are unit-norm; callers can rely on the closed interval.
    """
    va = _as_vector(a, "a")
    vb = _as_vector(b, "b")
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatchError(
            f"dimensions differ: {va.shape[0]} vs {vb.shape[0]}"
        )
    return float(np.clip(np.dot(va, vb), -1.0, 1.0))


def compute_prototype(class_id: ClassId, enrollment: Sequence) -> "Prototype":
    """Normalized centroid of a class's enrollment embeddings.

    The mean is accumulated over a canonically sorted copy of the input
    (lexicographic row order), so any permutation of the enrollment sequence
    produces a bit-identical center.
    """
    if len(enrollment) == 0:
        raise EmptyEnrollmentError(f"class {class_id!r}: empty enrollment")
    rows = np.asarray([_as_vector(e, "enrollment embedding") for e in enrollment])
    if rows.ndim != 2:
        raise DimensionMismatchError("enrollment embeddings have mixed dimensions")
    # Lexicographic sort fixes the summation order independent of input order.
    order = np.lexsort(rows.T[::-1])
    mean = np.add.reduce(rows[order], axis=0) / rows.shape[0]
    norm = float(np.linalg.norm(mean))
    if norm < ZERO_NORM_THRESHOLD:
        raise ZeroNormError(
            f"class {class_id!r}: enrollment mean has norm {norm:.3e} "
            "(antipodal or corrupt enrollment)"
        )
    return Prototype(class_id=class_id, center=mean / norm)


@dataclass(frozen=True)
class Prototype:
    """An enrolled identity: class id plus unit-norm centroid."""

    class_id: ClassId
    center: np.ndarray

    def __post_init__(self):
        center = _as_vector(self.center, "center")
        if not is_unit(center):
            raise ZeroNormError(
                f"prototype {self.class_id!r}: center norm deviates from 1 "
                f"by more than {UNIT_NORM_TOLERANCE:.0e}"
            )
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    @property
    def dimension(self) -> int:
        return int(self.center.shape[0])


@dataclass(frozen=True)
class ScoreVector:
    """Cosine similarities of one probe against every gallery prototype,
    in gallery order."""

    class_ids: tuple[ClassId, ...]
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.class_ids),):
            raise DimensionMismatchError(
                f"{len(self.class_ids)} class ids vs {scores.shape} scores"
            )
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.class_ids)


class Gallery:
    """Read-only, insertion-ordered set of enrolled prototypes.

    Prototype order is preserved so argmax tie-breaking (lowest index wins)
    is reproducible. The stacked center matrix is cached for fast scoring.
    """

    def __init__(self, prototypes: Iterable[Prototype], dimension: int | None = None):
        protos = tuple(prototypes)
        if dimension is None:
            if not protos:
                raise EmptyGalleryError(
                    "empty gallery needs an explicit dimension"
                )
            dimension = protos[0].dimension
        if dimension < 2:
            raise DimensionMismatchError(f"gallery dimension must be >= 2, got {dimension}")
        seen: set[ClassId] = set()
        for p in protos:
            if p.dimension != dimension:
                raise DimensionMismatchError(
                    f"prototype {p.class_id!r} has dimension {p.dimension}, expected {dimension}"
                )
            if p.class_id in seen:
                raise DuplicateClassError(f"duplicate class id {p.class_id!r}")
            seen.add(p.class_id)
        self._prototypes = protos
        self._dimension = int(dimension)
        if protos:
            self._matrix = np.stack([p.center for p in protos])
        else:
            self._matrix = np.empty((0, self._dimension), dtype=np.float64)
        self._matrix.setflags(write=False)

    @property
    def prototypes(self) -> tuple[Prototype, ...]:
        return self._prototypes

    @property
    def class_ids(self) -> tuple[ClassId, ...]:
        return tuple(p.class_id for p in self._prototypes)

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def matrix(self) -> np.ndarray:
        """(C, D) stacked prototype centers, read-only."""
        return self._matrix

    def __len__(self) -> int:
        return len(self._prototypes)

    def append(self, prototype: Prototype) -> "Gallery":
        """New gallery with one more prototype; existing ones are reused as-is."""
        if prototype.dimension != self._dimension:
            raise DimensionMismatchError(
                f"new prototype dimension {prototype.dimension} != {self._dimension}"
            )
        if prototype.class_id in set(self.class_ids):
            raise DuplicateClassError(f"duplicate class id {prototype.class_id!r}")
        return Gallery(self._prototypes + (prototype,))


def score_against_gallery(z, gallery: Gallery) -> ScoreVector:
    """Cosine similarity of one probe embedding against every prototype.

    Scores come back in gallery order, clamped to [-1, 1].
    """
    if len(gallery) == 0:
        raise EmptyGalleryError("cannot score against an empty gallery")
    zq = _as_vector(z, "probe")
    if zq.shape[0] != gallery.dimension:
        raise DimensionMismatchError(
            f"probe dimension {zq.shape[0]} != gallery dimension {gallery.dimension}"
        )
    scores = np.clip(gallery.matrix @ zq, -1.0, 1.0)
    return ScoreVector(class_ids=gallery.class_ids, scores=scores)
