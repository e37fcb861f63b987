"""Subject-disjoint open-set protocol construction.

Subjects are split into known and unknown sets with all their classes
traveling together (no sibling-instance leakage), known classes are split
into train/validation/test, test and calibration classes get disjoint
enrollment/probe sample assignments, and validation classes are divided into
calibration-knowns and pseudo-unknowns for threshold calibration.

Every step is deterministic under the config seed, and a completed split
serializes to a JSON manifest that round-trips byte-identically.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .collection import EmbeddingCollection
from .core import ClassId
from .errors import (
    AllClassesDroppedError,
    InsufficientSamplesError,
    SingleSessionError,
    TooFewSubjectsError,
    ValidationTooSmallError,
)

logger = logging.getLogger(__name__)

MODE_SAMPLE_BASED = "sample_based"
MODE_SESSION_BASED = "session_based"

#: Named train/val/test fraction presets over the known classes.
SPLIT_PRESETS = {
    "60-10-30": (0.60, 0.10, 0.30),
    "50-15-35": (0.50, 0.15, 0.35),
    "55-10-35": (0.55, 0.10, 0.35),
}

MANIFEST_FORMAT = "openvein-split"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Sample:
    """One sample of one class: an opaque reference (row index in the source
    collection) plus an optional acquisition-session tag."""

    ref: int
    session: str | None = None


@dataclass(frozen=True)
class SubjectRecord:
    """A subject and the anatomical-instance classes (with samples) it owns."""

    subject_id: str
    classes: dict[ClassId, tuple[Sample, ...]]

    def __post_init__(self):
        object.__setattr__(
            self,
            "classes",
            {c: tuple(samples) for c, samples in self.classes.items()},
        )


@dataclass(frozen=True)
class SplitConfig:
    known_fraction: float = 0.7
    train_fraction: float = 0.60
    val_fraction: float = 0.10
    test_fraction: float = 0.30
    n_enroll: int = 7
    mode: str = MODE_SAMPLE_BASED
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.known_fraction < 1.0:
            raise ValueError(f"known_fraction must be in (0, 1), got {self.known_fraction}")
        for name in ("train_fraction", "val_fraction", "test_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        total = self.train_fraction + self.val_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"train+val+test fractions must sum to 1, got {total}")
        if self.n_enroll < 1:
            raise ValueError(f"n_enroll must be >= 1, got {self.n_enroll}")
        if self.mode not in (MODE_SAMPLE_BASED, MODE_SESSION_BASED):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class ProtocolSplit:
    """A (possibly partially completed) protocol split.

    ``class_samples`` holds the retained classes' samples so the later
    assignment steps can run from the split alone. ``enroll``/``probes`` are
    filled per test class by assign_enroll_probe and per calibration-known
    class by select_pseudo_unknowns.
    """

    config: SplitConfig
    known_subjects: tuple[str, ...]
    unknown_subjects: tuple[str, ...]
    train_classes: tuple[ClassId, ...]
    val_classes: tuple[ClassId, ...]
    test_classes: tuple[ClassId, ...]
    subject_classes: dict[str, tuple[ClassId, ...]]
    class_samples: dict[ClassId, tuple[Sample, ...]]
    dropped_classes: tuple[ClassId, ...] = ()
    enroll: dict[ClassId, tuple[int, ...]] = field(default_factory=dict)
    probes: dict[ClassId, tuple[int, ...]] = field(default_factory=dict)
    calibration_known_classes: tuple[ClassId, ...] = ()
    pseudo_unknown_classes: tuple[ClassId, ...] = ()

    @property
    def unknown_classes(self) -> tuple[ClassId, ...]:
        out: list[ClassId] = []
        for subject in self.unknown_subjects:
            out.extend(self.subject_classes[subject])
        return tuple(out)

    def sample_roles(self) -> dict[int, str]:
        """Role of every retained sample, keyed by its reference.

        Roles: train, enroll, probe, cal_enroll, cal_probe, cal_unknown,
        unknown_probe. Meaningful once all three construction steps ran.
        """
        roles: dict[int, str] = {}

        def put(refs, role: str) -> None:
            for ref in refs:
                if ref in roles:
                    raise ValueError(f"sample {ref} assigned twice: {roles[ref]} / {role}")
                roles[ref] = role

        for c in self.train_classes:
            put((s.ref for s in self.class_samples[c]), "train")
        for c in self.test_classes:
            put(self.enroll.get(c, ()), "enroll")
            put(self.probes.get(c, ()), "probe")
        for c in self.calibration_known_classes:
            put(self.enroll.get(c, ()), "cal_enroll")
            put(self.probes.get(c, ()), "cal_probe")
        for c in self.pseudo_unknown_classes:
            put((s.ref for s in self.class_samples[c]), "cal_unknown")
        for c in self.unknown_classes:
            put((s.ref for s in self.class_samples[c]), "unknown_probe")
        return roles


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    """Split n items into len(fractions) counts: floor each target, then hand
    remainders to the largest fractional parts (lowest index on ties)."""
    targets = [n * f for f in fractions]
    counts = [int(np.floor(t)) for t in targets]
    remainder = n - sum(counts)
    by_frac = sorted(
        range(len(fractions)), key=lambda i: (-(targets[i] - counts[i]), i)
    )
    for i in by_frac[:remainder]:
        counts[i] += 1
    return counts


def _class_supported(samples: Sequence[Sample], cfg: SplitConfig) -> bool:
    if cfg.mode == MODE_SESSION_BASED:
        return len({s.session for s in samples}) >= 2
    return len(samples) >= cfg.n_enroll + 1


def split_subjects(
    subjects: Sequence[SubjectRecord], cfg: SplitConfig
) -> ProtocolSplit:
    """Partition subjects into known/unknown and known classes into
    train/val/test, deterministically under cfg.seed.

    Classes that cannot support enrollment plus at least one probe under the
    configured mode are dropped with a warning; subjects left with no classes
    are excluded before partitioning.
    """
    retained: list[SubjectRecord] = []
    dropped: list[ClassId] = []
    for subject in subjects:
        kept = {
            c: samples
            for c, samples in subject.classes.items()
            if _class_supported(samples, cfg)
        }
        for c in subject.classes:
            if c not in kept:
                dropped.append(c)
        if kept:
            retained.append(SubjectRecord(subject_id=subject.subject_id, classes=kept))
    if dropped:
        logger.warning(
            "dropped %d class(es) with insufficient samples/sessions: %s",
            len(dropped), sorted(dropped),
        )
    if not retained:
        raise AllClassesDroppedError(
            "no class satisfies the enrollment requirement"
        )
    if len(retained) < 4:
        raise TooFewSubjectsError(
            f"need >= 4 usable subjects, have {len(retained)}"
        )

    retained = sorted(retained, key=lambda s: s.subject_id)
    subject_ids = [s.subject_id for s in retained]

    rng_subjects = np.random.default_rng([cfg.seed, 1])
    order = [subject_ids[i] for i in rng_subjects.permutation(len(subject_ids))]
    n_known, n_unknown = _allocate(
        len(order), (cfg.known_fraction, 1.0 - cfg.known_fraction)
    )
    if n_known == 0 or n_unknown == 0:
        raise TooFewSubjectsError(
            f"known_fraction {cfg.known_fraction} leaves an empty side "
            f"with {len(order)} subjects"
        )
    known_subjects = tuple(order[:n_known])
    unknown_subjects = tuple(order[n_known:])

    by_id = {s.subject_id: s for s in retained}
    known_classes: list[ClassId] = []
    for subject in known_subjects:
        known_classes.extend(sorted(by_id[subject].classes))

    rng_classes = np.random.default_rng([cfg.seed, 2])
    class_order = [known_classes[i] for i in rng_classes.permutation(len(known_classes))]
    n_train, n_val, n_test = _allocate(
        len(class_order), (cfg.train_fraction, cfg.val_fraction, cfg.test_fraction)
    )

    subject_classes = {
        s.subject_id: tuple(sorted(s.classes)) for s in retained
    }
    class_samples: dict[ClassId, tuple[Sample, ...]] = {}
    for subject in retained:
        class_samples.update(subject.classes)

    return ProtocolSplit(
        config=cfg,
        known_subjects=known_subjects,
        unknown_subjects=unknown_subjects,
        train_classes=tuple(class_order[:n_train]),
        val_classes=tuple(class_order[n_train : n_train + n_val]),
        test_classes=tuple(class_order[n_train + n_val :]),
        subject_classes=subject_classes,
        class_samples=class_samples,
        dropped_classes=tuple(sorted(dropped)),
    )


def _split_one_class(
    class_id: ClassId,
    samples: tuple[Sample, ...],
    mode: str,
    n_enroll: int,
    rng: np.random.Generator,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(enrollment refs, probe refs) for one class under the given mode."""
    if mode == MODE_SESSION_BASED:
        sessions = sorted({s.session for s in samples if s.session is not None})
        if len({s.session for s in samples}) < 2:
            raise SingleSessionError(
                f"class {class_id!r}: session-based split needs >= 2 sessions"
            )
        enroll_session = sessions[int(rng.integers(len(sessions)))]
        enroll = tuple(s.ref for s in samples if s.session == enroll_session)
        probes = tuple(s.ref for s in samples if s.session != enroll_session)
        return enroll, probes
    if len(samples) < n_enroll + 1:
        raise InsufficientSamplesError(
            f"class {class_id!r}: {len(samples)} samples < n_enroll + 1 = {n_enroll + 1}"
        )
    order = rng.permutation(len(samples))
    refs = [samples[i].ref for i in order]
    return tuple(refs[:n_enroll]), tuple(refs[n_enroll:])


def assign_enroll_probe(
    split: ProtocolSplit,
    mode: str | None = None,
    n_enroll: int | None = None,
) -> ProtocolSplit:
    """Assign disjoint enrollment and probe samples to every test class.

    sample_based: the first n_enroll samples in seeded shuffled order enroll,
    the rest probe. session_based: one seeded-chosen session enrolls, all
    other sessions probe.
    """
    mode = mode or split.config.mode
    n_enroll = n_enroll if n_enroll is not None else split.config.n_enroll
    rng = np.random.default_rng([split.config.seed, 3])
    enroll = dict(split.enroll)
    probes = dict(split.probes)
    for c in sorted(split.test_classes):
        enroll[c], probes[c] = _split_one_class(
            c, split.class_samples[c], mode, n_enroll, rng
        )
    return replace(split, enroll=enroll, probes=probes)


def select_pseudo_unknowns(split: ProtocolSplit) -> ProtocolSplit:
    """Divide validation classes 50/50 into calibration-knowns (enrolled into
    a calibration-only gallery) and pseudo-unknowns (never enrolled), and
    assign enrollment/probe samples to the calibration-knowns."""
    if len(split.val_classes) < 2:
        raise ValidationTooSmallError(
            f"need >= 2 validation classes, have {len(split.val_classes)}"
        )
    rng = np.random.default_rng([split.config.seed, 4])
    order = [split.val_classes[i] for i in rng.permutation(len(split.val_classes))]
    n_cal, _ = _allocate(len(order), (0.5, 0.5))
    cal_known = tuple(order[:n_cal])
    pseudo = tuple(order[n_cal:])

    rng_assign = np.random.default_rng([split.config.seed, 5])
    enroll = dict(split.enroll)
    probes = dict(split.probes)
    for c in sorted(cal_known):
        enroll[c], probes[c] = _split_one_class(
            c, split.class_samples[c], split.config.mode, split.config.n_enroll, rng_assign
        )
    return replace(
        split,
        enroll=enroll,
        probes=probes,
        calibration_known_classes=cal_known,
        pseudo_unknown_classes=pseudo,
    )


def build_protocol(
    subjects: Sequence[SubjectRecord], cfg: SplitConfig
) -> ProtocolSplit:
    """split_subjects -> assign_enroll_probe -> select_pseudo_unknowns."""
    split = split_subjects(subjects, cfg)
    split = assign_enroll_probe(split)
    return select_pseudo_unknowns(split)


def subjects_from_collection(col: EmbeddingCollection) -> tuple[SubjectRecord, ...]:
    """Group a collection's rows into SubjectRecords.

    Rows without subject tags fall back to one subject per class. Sample
    references are the collection row indices.
    """
    classes: dict[ClassId, list[Sample]] = {}
    class_subject: dict[ClassId, str] = {}
    for i, label in enumerate(col.labels):
        session = col.sessions[i] if col.sessions is not None else None
        classes.setdefault(label, []).append(Sample(ref=i, session=session))
        subject = col.subjects[i] if col.subjects is not None else f"subject:{label}"
        previous = class_subject.setdefault(label, subject)
        if previous != subject:
            raise ValueError(
                f"class {label!r} appears under two subjects: {previous!r}, {subject!r}"
            )
    by_subject: dict[str, dict[ClassId, tuple[Sample, ...]]] = {}
    for label, samples in classes.items():
        by_subject.setdefault(class_subject[label], {})[label] = tuple(samples)
    return tuple(
        SubjectRecord(subject_id=subject, classes=by_subject[subject])
        for subject in sorted(by_subject)
    )


# -- manifest serialization ----------------------------------------------------

def split_to_manifest(split: ProtocolSplit) -> dict:
    """JSON-ready manifest capturing the whole split plus its config/seed."""
    cfg = split.config
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config": {
            "known_fraction": cfg.known_fraction,
            "train_fraction": cfg.train_fraction,
            "val_fraction": cfg.val_fraction,
            "test_fraction": cfg.test_fraction,
            "n_enroll": cfg.n_enroll,
            "mode": cfg.mode,
            "seed": cfg.seed,
        },
        "known_subjects": list(split.known_subjects),
        "unknown_subjects": list(split.unknown_subjects),
        "train_classes": list(split.train_classes),
        "val_classes": list(split.val_classes),
        "test_classes": list(split.test_classes),
        "subject_classes": {s: list(cs) for s, cs in sorted(split.subject_classes.items())},
        "class_samples": {
            c: [[s.ref, s.session] for s in samples]
            for c, samples in sorted(split.class_samples.items())
        },
        "dropped_classes": list(split.dropped_classes),
        "enroll": {c: list(refs) for c, refs in sorted(split.enroll.items())},
        "probes": {c: list(refs) for c, refs in sorted(split.probes.items())},
        "calibration_known_classes": list(split.calibration_known_classes),
        "pseudo_unknown_classes": list(split.pseudo_unknown_classes),
    }


def split_from_manifest(manifest: Mapping) -> ProtocolSplit:
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"not a split manifest: format={manifest.get('format')!r}")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('version')!r}")
    cfg = SplitConfig(**manifest["config"])
    return ProtocolSplit(
        config=cfg,
        known_subjects=tuple(manifest["known_subjects"]),
        unknown_subjects=tuple(manifest["unknown_subjects"]),
        train_classes=tuple(manifest["train_classes"]),
        val_classes=tuple(manifest["val_classes"]),
        test_classes=tuple(manifest["test_classes"]),
        subject_classes={
            s: tuple(cs) for s, cs in manifest["subject_classes"].items()
        },
        class_samples={
            c: tuple(Sample(ref=ref, session=session) for ref, session in samples)
            for c, samples in manifest["class_samples"].items()
        },
        dropped_classes=tuple(manifest["dropped_classes"]),
        enroll={c: tuple(refs) for c, refs in manifest["enroll"].items()},
        probes={c: tuple(refs) for c, refs in manifest["probes"].items()},
        calibration_known_classes=tuple(manifest["calibration_known_classes"]),
        pseudo_unknown_classes=tuple(manifest["pseudo_unknown_classes"]),
    )


def manifest_bytes(split: ProtocolSplit) -> bytes:
    """Canonical UTF-8 JSON encoding (stable for hashing and round-trips)."""
    return json.dumps(
        split_to_manifest(split), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
