"""File formats: the binary embedding file, its CSV fallback, the JSON
gallery file, report documents, and the CSV emitters for curves and traces.

The binary layout is little-endian: a fixed header (magic, version, flags,
dimension, record count, string-table offset), packed records (class index,
optional subject/session indices, float32 coordinates), and a shared string
table. Coordinates are stored in 32 bits; reading upcasts to float64.
Writers are deterministic functions of their inputs, so write-read-write
cycles are byte-identical.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .collection import EmbeddingCollection
from .core import Gallery, Prototype, UNIT_NORM_TOLERANCE
from .decision import CalibrationResult
from .errors import (
    BadMagicError,
    CorruptHeaderError,
    IncompleteReportError,
    NonFiniteValueError,
    VersionUnsupportedError,
)
from .metrics import EvalReport
from .training import ToyHead

MAGIC = b"VEMB"
EMBEDDING_FILE_VERSION = 1
_HEADER = struct.Struct("<4sHHIQQ")   # magic, version, flags, dim, count, table offset

_FLAG_SUBJECT = 1 << 0
_FLAG_SESSION = 1 << 1
_FLAG_NORMALIZED = 1 << 2

GALLERY_FORMAT = "openvein-gallery"
GALLERY_VERSION = 1
HEAD_FORMAT = "openvein-head"
HEAD_VERSION = 1
REPORT_FORMAT = "openvein-report"


class _StringTable:
    """First-occurrence interning of record strings."""

    def __init__(self):
        self.strings: list[str] = []
        self._index: dict[str, int] = {}

    def intern(self, s: str) -> int:
        if not s:
            raise ValueError("empty label strings are not allowed")
        if s not in self._index:
            self._index[s] = len(self.strings)
            self.strings.append(s)
        return self._index[s]

    def encode(self) -> bytes:
        chunks = [struct.pack("<I", len(self.strings))]
        for s in self.strings:
            raw = s.encode("utf-8")
            chunks.append(struct.pack("<H", len(raw)))
            chunks.append(raw)
        return b"".join(chunks)


def write_embeddings(col: EmbeddingCollection, path) -> None:
    """Serialize a collection to the binary embedding format."""
    if not np.all(np.isfinite(col.vectors)):
        raise NonFiniteValueError("refusing to write non-finite coordinates")
    flags = 0
    if col.subjects is not None:
        flags |= _FLAG_SUBJECT
    if col.sessions is not None:
        flags |= _FLAG_SESSION
    if col.normalized:
        flags |= _FLAG_NORMALIZED

    table = _StringTable()
    records = []
    coords32 = col.vectors.astype("<f4")
    for i in range(len(col)):
        parts = [struct.pack("<I", table.intern(col.labels[i]))]
        if col.subjects is not None:
            parts.append(struct.pack("<I", table.intern(col.subjects[i])))
        if col.sessions is not None:
            parts.append(struct.pack("<I", table.intern(col.sessions[i])))
        parts.append(coords32[i].tobytes())
        records.append(b"".join(parts))

    body = b"".join(records)
    table_offset = _HEADER.size + len(body)
    header = _HEADER.pack(
        MAGIC, EMBEDDING_FILE_VERSION, flags, col.dimension, len(col), table_offset
    )
    Path(path).write_bytes(header + body + table.encode())


def read_embeddings(path) -> EmbeddingCollection:
    """Read a binary embedding file back into a collection (float64)."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise CorruptHeaderError(f"{path}: file shorter than the header")
    magic, version, flags, dim, count, table_offset = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} != {MAGIC!r}")
    if version != EMBEDDING_FILE_VERSION:
        raise VersionUnsupportedError(f"{path}: version {version} unsupported")
    if dim < 2:
        raise CorruptHeaderError(f"{path}: dimension {dim} < 2")

    has_subject = bool(flags & _FLAG_SUBJECT)
    has_session = bool(flags & _FLAG_SESSION)
    record_size = 4 + 4 * has_subject + 4 * has_session + 4 * dim
    body_end = _HEADER.size + record_size * count
    if table_offset != body_end or len(blob) < body_end:
        raise CorruptHeaderError(
            f"{path}: header inconsistent with payload "
            f"(records end at {body_end}, table offset {table_offset}, size {len(blob)})"
        )

    strings = _read_string_table(blob, table_offset, path)

    def lookup(idx: int) -> str:
        if idx >= len(strings):
            raise CorruptHeaderError(f"{path}: string index {idx} out of range")
        return strings[idx]

    vectors = np.empty((count, dim), dtype=np.float64)
    labels, subjects, sessions = [], [], []
    offset = _HEADER.size
    for i in range(count):
        (label_idx,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        labels.append(lookup(label_idx))
        if has_subject:
            (subject_idx,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            subjects.append(lookup(subject_idx))
        if has_session:
            (session_idx,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            sessions.append(lookup(session_idx))
        row = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        vectors[i] = row
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteValueError(f"{path}: non-finite coordinates")
    return EmbeddingCollection(
        vectors=vectors,
        labels=tuple(labels),
        subjects=tuple(subjects) if has_subject else None,
        sessions=tuple(sessions) if has_session else None,
        normalized=bool(flags & _FLAG_NORMALIZED),
    )


def _read_string_table(blob: bytes, offset: int, path) -> list[str]:
    try:
        (n_strings,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        strings = []
        for _ in range(n_strings):
            (length,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            raw = blob[offset : offset + length]
            if len(raw) != length:
                raise CorruptHeaderError(f"{path}: truncated string table")
            offset += length
            s = raw.decode("utf-8")
            if not s:
                raise CorruptHeaderError(f"{path}: empty string in table")
            strings.append(s)
    except struct.error as exc:
        raise CorruptHeaderError(f"{path}: truncated string table") from exc
    if offset != len(blob):
        raise CorruptHeaderError(f"{path}: {len(blob) - offset} trailing bytes")
    return strings


# -- CSV fallback ---------------------------------------------------------------

def write_embeddings_csv(col: EmbeddingCollection, path) -> None:
    """CSV twin of the binary format: label[,subject][,session],x0..x{D-1}.

    Coordinates are quantized to float32 first so both formats parse to the
    same values.
    """
    columns = ["label"]
    if col.subjects is not None:
        columns.append("subject")
    if col.sessions is not None:
        columns.append("session")
    columns.extend(f"x{i}" for i in range(col.dimension))
    lines = [",".join(columns)]
    coords32 = col.vectors.astype(np.float32)
    for i in range(len(col)):
        row = [col.labels[i]]
        if col.subjects is not None:
            row.append(col.subjects[i])
        if col.sessions is not None:
            row.append(col.sessions[i])
        row.extend(repr(float(v)) for v in coords32[i])
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_embeddings_csv(path) -> EmbeddingCollection:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise CorruptHeaderError(f"{path}: empty CSV")
    columns = lines[0].split(",")
    has_subject = "subject" in columns
    has_session = "session" in columns
    first_coord = 1 + has_subject + has_session
    dim = len(columns) - first_coord
    if dim < 2 or columns[first_coord:] != [f"x{i}" for i in range(dim)]:
        raise CorruptHeaderError(f"{path}: unexpected CSV header {columns!r}")

    vectors = np.empty((len(lines) - 1, dim), dtype=np.float64)
    labels, subjects, sessions = [], [], []
    for r, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != len(columns):
            raise CorruptHeaderError(f"{path}: row {r} has {len(cells)} cells")
        if not cells[0]:
            raise CorruptHeaderError(f"{path}: row {r} has an empty label")
        labels.append(cells[0])
        cursor = 1
        if has_subject:
            subjects.append(cells[cursor])
            cursor += 1
        if has_session:
            sessions.append(cells[cursor])
            cursor += 1
        vectors[r] = [float(v) for v in cells[cursor:]]
    if not np.all(np.isfinite(vectors)):
        raise NonFiniteValueError(f"{path}: non-finite coordinates")
    norms = np.linalg.norm(vectors, axis=1)
    normalized = bool(np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOLERANCE))
    return EmbeddingCollection(
        vectors=vectors,
        labels=tuple(labels),
        subjects=tuple(subjects) if has_subject else None,
        sessions=tuple(sessions) if has_session else None,
        normalized=normalized,
    )


# -- gallery file -----------------------------------------------------------------

def _canonical_json_bytes(doc) -> bytes:
    return (
        json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
    ).encode("utf-8")


def write_gallery(
    gallery: Gallery,
    path,
    threshold: float | None = None,
    rule_k: int = 1,
    provenance: dict | None = None,
) -> None:
    """Serialize a gallery with its calibrated threshold (if any), decision
    rule k, and provenance. Float64 values round-trip exactly via JSON."""
    for p in gallery.prototypes:
        if not np.all(np.isfinite(p.center)):
            raise NonFiniteValueError(f"prototype {p.class_id!r} has non-finite center")
    if threshold is not None and not math.isfinite(threshold):
        raise NonFiniteValueError(f"threshold {threshold!r} is not finite")
    doc = {
        "format": GALLERY_FORMAT,
        "version": GALLERY_VERSION,
        "dimension": gallery.dimension,
        "rule_k": rule_k,
        "threshold": threshold,
        "prototypes": [
            {"class_id": p.class_id, "center": [float(v) for v in p.center]}
            for p in gallery.prototypes
        ],
        "provenance": provenance or {},
    }
    Path(path).write_bytes(_canonical_json_bytes(doc))


def read_gallery(path) -> tuple[Gallery, float | None, int, dict]:
    """Returns (gallery, threshold, rule_k, provenance)."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptHeaderError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != GALLERY_FORMAT:
        raise BadMagicError(f"{path}: not a gallery file")
    if doc.get("version") != GALLERY_VERSION:
        raise VersionUnsupportedError(f"{path}: version {doc.get('version')!r}")
    try:
        dimension = int(doc["dimension"])
        rule_k = int(doc["rule_k"])
        threshold = doc["threshold"]
        entries = doc["prototypes"]
        provenance = doc["provenance"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeaderError(f"{path}: malformed gallery document: {exc}") from exc
    if threshold is not None and not math.isfinite(threshold):
        raise NonFiniteValueError(f"{path}: non-finite threshold")
    prototypes = []
    for entry in entries:
        center = np.asarray(entry["center"], dtype=np.float64)
        if not np.all(np.isfinite(center)):
            raise NonFiniteValueError(f"{path}: non-finite prototype center")
        prototypes.append(Prototype(class_id=entry["class_id"], center=center))
    gallery = Gallery(prototypes, dimension=dimension)
    return gallery, threshold, rule_k, provenance


# -- toy head file ----------------------------------------------------------------

def write_head(head: ToyHead, path) -> None:
    doc = {
        "format": HEAD_FORMAT,
        "version": HEAD_VERSION,
        "dim_in": head.dim_in,
        "dim_out": head.dim_out,
        "weight": [[float(v) for v in row] for row in head.weight],
        "learning_rate": head.learning_rate,
        "epochs": head.epochs,
        "seed": head.seed,
    }
    Path(path).write_bytes(_canonical_json_bytes(doc))


def read_head(path) -> ToyHead:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptHeaderError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != HEAD_FORMAT:
        raise BadMagicError(f"{path}: not a head file")
    if doc.get("version") != HEAD_VERSION:
        raise VersionUnsupportedError(f"{path}: version {doc.get('version')!r}")
    return ToyHead(
        weight=np.asarray(doc["weight"], dtype=np.float64),
        learning_rate=float(doc["learning_rate"]),
        epochs=int(doc["epochs"]),
        seed=int(doc["seed"]),
    )


# -- report emission ----------------------------------------------------------------

REPORT_ROW_COLUMNS = ("OSCR", "AUROC", "EER", "R1", "Accuracy", "Time[ms]")


def format_report_row(report: EvalReport) -> str:
    """Six-column summary row: OSCR, AUROC, EER, R1, Accuracy, Time[ms],
    four decimal places each."""
    values = (
        report.oscr_area,
        report.auroc,
        report.eer_percent,
        report.rank1,
        report.known_accuracy,
        report.mean_query_time_ms,
    )
    for name, value in zip(REPORT_ROW_COLUMNS, values):
        if value is None or not math.isfinite(value):
            raise IncompleteReportError(f"report field {name} is missing or non-finite")
    return "  ".join(f"{v:8.4f}" for v in values)


def format_report_header() -> str:
    return "  ".join(f"{name:>8s}" for name in REPORT_ROW_COLUMNS)


def report_to_doc(report: EvalReport) -> dict:
    doc = {
        "format": REPORT_FORMAT,
        "oscr": report.oscr_area,
        "auroc": report.auroc,
        "eer_percent": report.eer_percent,
        "rank1": report.rank1,
        "rank5": report.rank5,
        "known_accuracy": report.known_accuracy,
        "unknown_rejection_rate": report.unknown_rejection_rate,
        "calibrated_tau": report.calibrated_tau,
        "mean_query_time_ms": report.mean_query_time_ms,
        "tpr_at_fpr": {f"{t:g}": v for t, v in sorted(report.tpr_at_fpr.items())},
    }
    if report.roc is not None:
        doc["roc"] = {
            "fpr": [float(v) for v in report.roc.fpr],
            "tpr": [float(v) for v in report.roc.tpr],
        }
    if report.oscr is not None:
        doc["oscr_curve"] = {
            "fpr": [float(v) for v in report.oscr.fpr],
            "ccr": [float(v) for v in report.oscr.ccr],
        }
    if report.calibration is not None:
        cal = report.calibration
        doc["calibration"] = {
            "criterion": cal.criterion,
            "threshold": cal.threshold,
            "achieved_ccr": cal.achieved_ccr,
            "achieved_fpr": cal.achieved_fpr,
            "fpr_target": cal.fpr_target,
            "target_unattainable": cal.target_unattainable,
        }
    return doc


def write_report(report: EvalReport, path) -> None:
    Path(path).write_bytes(_canonical_json_bytes(report_to_doc(report)))


def write_curve_csv(xs, ys, path, header: str = "x,y") -> None:
    lines = [header]
    lines.extend(f"{repr(float(x))},{repr(float(y))}" for x, y in zip(xs, ys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_trace_csv(result: CalibrationResult, path) -> None:
    lines = ["tau,ccr,fpr"]
    lines.extend(
        f"{repr(t)},{repr(c)},{repr(f)}" for t, c, f in result.sweep_trace
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_loss_trace_csv(trace, path) -> None:
    lines = ["epoch,loss"]
    lines.extend(f"{epoch},{repr(float(value))}" for epoch, value in enumerate(trace))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
