import numpy as np
import pytest

from openvein.collection import EmbeddingCollection
from openvein.core import Gallery, Prototype, normalize
from openvein.errors import (
    BadMagicError,
    CorruptHeaderError,
    IncompleteReportError,
    NonFiniteValueError,
    VersionUnsupportedError,
)
from openvein.formats import (
    format_report_header,
    format_report_row,
    read_embeddings,
    read_embeddings_csv,
    read_gallery,
    read_head,
    write_embeddings,
    write_embeddings_csv,
    write_gallery,
    write_head,
)
from openvein.metrics import EvalReport
from openvein.training import ToyHead


def make_collection(rng, n=100, dim=32, subjects=True, sessions=False, normalized=True):
    vectors = np.array([
        normalize(rng.standard_normal(dim)) if normalized else rng.standard_normal(dim)
        for _ in range(n)
    ])
    labels = tuple(f"class_{i % 10}" for i in range(n))
    return EmbeddingCollection(
        vectors=vectors,
        labels=labels,
        subjects=tuple(f"subj_{i % 5}" for i in range(n)) if subjects else None,
        sessions=tuple(("A", "B")[i % 2] for i in range(n)) if sessions else None,
        normalized=normalized,
    )


def collections_equal(a: EmbeddingCollection, b: EmbeddingCollection) -> bool:
    return (
        np.array_equal(a.vectors, b.vectors)
        and a.labels == b.labels
        and a.subjects == b.subjects
        and a.sessions == b.sessions
        and a.normalized == b.normalized
    )


class TestEmbeddingFile:
    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(80)
        col = make_collection(rng, n=100, dim=32, sessions=True)
        path = tmp_path / "a.vemb"
        write_embeddings(col, path)
        first = path.read_bytes()
        col2 = read_embeddings(path)
        write_embeddings(col2, path)
        assert path.read_bytes() == first

    def test_values_bit_exact_at_stored_precision(self, tmp_path):
        rng = np.random.default_rng(81)
        col = make_collection(rng, n=20, dim=8)
        path = tmp_path / "a.vemb"
        write_embeddings(col, path)
        col2 = read_embeddings(path)
        np.testing.assert_array_equal(
            col2.vectors, col.vectors.astype(np.float32).astype(np.float64)
        )
        assert col2.labels == col.labels
        assert col2.subjects == col.subjects
        assert col2.normalized

    def test_single_record(self, tmp_path):
        col = EmbeddingCollection(
            vectors=np.array([[0.6, 0.8]]), labels=("only",), normalized=True
        )
        path = tmp_path / "one.vemb"
        write_embeddings(col, path)
        col2 = read_embeddings(path)
        np.testing.assert_array_equal(
            col2.vectors, col.vectors.astype(np.float32).astype(np.float64)
        )
        assert col2.labels == col.labels and col2.normalized

    def test_raw_collection_round_trip(self, tmp_path):
        rng = np.random.default_rng(82)
        col = make_collection(rng, n=10, dim=16, normalized=False)
        path = tmp_path / "raw.vemb"
        write_embeddings(col, path)
        col2 = read_embeddings(path)
        assert not col2.normalized
        np.testing.assert_array_equal(
            col2.vectors, col.vectors.astype(np.float32).astype(np.float64)
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vemb"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(BadMagicError):
            read_embeddings(path)

    def test_unsupported_version(self, tmp_path):
        rng = np.random.default_rng(83)
        col = make_collection(rng, n=3, dim=4)
        path = tmp_path / "v.vemb"
        write_embeddings(col, path)
        blob = bytearray(path.read_bytes())
        blob[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionUnsupportedError):
            read_embeddings(path)

    def test_truncated_file_corrupt_header(self, tmp_path):
        rng = np.random.default_rng(84)
        col = make_collection(rng, n=10, dim=8)
        path = tmp_path / "t.vemb"
        write_embeddings(col, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptHeaderError):
            read_embeddings(path)

    def test_too_short_for_header(self, tmp_path):
        path = tmp_path / "short.vemb"
        path.write_bytes(b"VE")
        with pytest.raises(CorruptHeaderError):
            read_embeddings(path)

    def test_non_finite_write_rejected(self, tmp_path):
        col = EmbeddingCollection(
            vectors=np.array([[1.0, 0.0], [0.5, 0.5]]),
            labels=("a", "b"),
            normalized=False,
        )
        bad = np.array(col.vectors)
        bad[0, 0] = np.inf
        broken = EmbeddingCollection.__new__(EmbeddingCollection)
        object.__setattr__(broken, "vectors", bad)
        object.__setattr__(broken, "labels", col.labels)
        object.__setattr__(broken, "subjects", None)
        object.__setattr__(broken, "sessions", None)
        object.__setattr__(broken, "normalized", False)
        with pytest.raises(NonFiniteValueError):
            write_embeddings(broken, tmp_path / "nf.vemb")

    def test_empty_label_rejected_on_write(self, tmp_path):
        col = EmbeddingCollection(
            vectors=np.array([[1.0, 0.0]]), labels=("ok",), normalized=False
        )
        broken = EmbeddingCollection.__new__(EmbeddingCollection)
        object.__setattr__(broken, "vectors", col.vectors)
        object.__setattr__(broken, "labels", ("",))
        object.__setattr__(broken, "subjects", None)
        object.__setattr__(broken, "sessions", None)
        object.__setattr__(broken, "normalized", False)
        with pytest.raises(ValueError):
            write_embeddings(broken, tmp_path / "el.vemb")


class TestCsvFallback:
    def test_cross_format_equivalence(self, tmp_path):
        rng = np.random.default_rng(85)
        col = make_collection(rng, n=30, dim=6, sessions=True)
        bin_path = tmp_path / "x.vemb"
        csv_path = tmp_path / "x.csv"
        write_embeddings(col, bin_path)
        write_embeddings_csv(col, csv_path)
        assert collections_equal(read_embeddings(bin_path), read_embeddings_csv(csv_path))

    def test_csv_without_optional_columns(self, tmp_path):
        rng = np.random.default_rng(86)
        col = make_collection(rng, n=5, dim=4, subjects=False)
        path = tmp_path / "plain.csv"
        write_embeddings_csv(col, path)
        col2 = read_embeddings_csv(path)
        assert col2.subjects is None and col2.sessions is None

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("foo,bar\n1,2\n")
        with pytest.raises(CorruptHeaderError):
            read_embeddings_csv(path)


class TestGalleryFile:
    def _gallery(self, rng, n=5, dim=8):
        return Gallery(
            [Prototype(f"c{i}", normalize(rng.standard_normal(dim))) for i in range(n)]
        )

    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(87)
        g = self._gallery(rng)
        path = tmp_path / "g.json"
        write_gallery(g, path, threshold=0.6123456789012345, rule_k=3,
                      provenance={"seeds": {"split": 7}})
        g2, threshold, k, provenance = read_gallery(path)
        assert threshold == 0.6123456789012345
        assert k == 3
        assert provenance == {"seeds": {"split": 7}}
        assert g2.class_ids == g.class_ids
        np.testing.assert_array_equal(g2.matrix, g.matrix)

    def test_round_trip_byte_identical(self, tmp_path):
        rng = np.random.default_rng(88)
        g = self._gallery(rng)
        path = tmp_path / "g.json"
        write_gallery(g, path, threshold=None, rule_k=1)
        first = path.read_bytes()
        g2, threshold, k, provenance = read_gallery(path)
        write_gallery(g2, path, threshold=threshold, rule_k=k, provenance=provenance)
        assert path.read_bytes() == first

    def test_threshold_absent_until_calibration(self, tmp_path):
        rng = np.random.default_rng(89)
        path = tmp_path / "g.json"
        write_gallery(self._gallery(rng), path)
        _, threshold, _, _ = read_gallery(path)
        assert threshold is None

    def test_not_a_gallery_rejected(self, tmp_path):
        path = tmp_path / "no.json"
        path.write_text('{"format": "something"}')
        with pytest.raises(BadMagicError):
            read_gallery(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(CorruptHeaderError):
            read_gallery(path)


class TestHeadFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(90)
        head = ToyHead(weight=rng.standard_normal((4, 6)), learning_rate=0.25,
                       epochs=50, seed=9)
        path = tmp_path / "h.json"
        write_head(head, path)
        head2 = read_head(path)
        np.testing.assert_array_equal(head2.weight, head.weight)
        assert head2.learning_rate == head.learning_rate
        assert head2.epochs == head.epochs
        assert head2.seed == head.seed


def full_report(time_ms=1.7685):
    return EvalReport(
        oscr_area=0.9945, auroc=0.9974, eer_percent=1.5714, rank1=0.9960,
        rank5=0.9990, known_accuracy=0.9833, unknown_rejection_rate=0.97,
        calibrated_tau=0.61, mean_query_time_ms=time_ms,
        tpr_at_fpr={0.01: 0.99, 0.001: 0.98},
    )


class TestReportRow:
    def test_exact_rendering(self):
        row = format_report_row(full_report())
        assert row.split() == ["0.9945", "0.9974", "1.5714", "0.9960", "0.9833", "1.7685"]

    def test_all_zero_report(self):
        report = EvalReport(
            oscr_area=0.0, auroc=0.0, eer_percent=0.0, rank1=0.0, rank5=0.0,
            known_accuracy=0.0, unknown_rejection_rate=0.0, calibrated_tau=0.0,
            mean_query_time_ms=0.0,
        )
        assert format_report_row(report).split() == ["0.0000"] * 6

    def test_report_without_curves_still_formats(self):
        report = full_report()
        assert report.roc is None and report.oscr is None
        assert format_report_row(report)

    def test_non_finite_time_rejected(self):
        with pytest.raises(IncompleteReportError):
            format_report_row(full_report(time_ms=float("nan")))

    def test_header_matches_column_order(self):
        assert format_report_header().split() == [
            "OSCR", "AUROC", "EER", "R1", "Accuracy", "Time[ms]"
        ]
