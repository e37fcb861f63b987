"""End-to-end protocol execution: enroll, calibrate, test, report.

``execute_protocol`` runs the three evaluation phases over a labeled
collection and a completed split; ``run_end_to_end`` composes synthetic data
generation, optional toy-head training, and protocol execution into one
deterministic benchmark run.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .collection import EmbeddingCollection
from .core import ClassId, Gallery, compute_prototype, score_against_gallery
from .decision import (
    CRITERION_MAX_CCR_MINUS_FPR,
    CalibrationResult,
    CalibrationSet,
    DecisionRule,
    calibrate_threshold,
    decide,
    decision_statistic,
)
from .metrics import (
    EvalReport,
    ProbeResult,
    auroc,
    cmc,
    eer,
    operational_metrics,
    oscr_area,
    oscr_curve,
    rate_at_fpr,
    roc_curve,
)
from .protocol import ProtocolSplit, SplitConfig, build_protocol, subjects_from_collection
from .synth import SynthConfig, generate_clusters, generate_raw_features
from .training import (
    SamplerConfig,
    ToyHead,
    train_toy_head,
)

TPR_AT_FPR_TARGETS = (1e-2, 1e-3)


def enroll_gallery(
    col: EmbeddingCollection, split: ProtocolSplit, classes: tuple[ClassId, ...]
) -> Gallery:
    """Build a gallery of prototypes from the split's enrollment samples,
    in the given class order."""
    prototypes = []
    for c in classes:
        rows = split.enroll[c]
        prototypes.append(compute_prototype(c, col.vectors[list(rows)]))
    return Gallery(prototypes)


def probe_results(
    col: EmbeddingCollection,
    gallery: Gallery,
    refs,
    k: int,
    true_label: ClassId | None = None,
) -> list[ProbeResult]:
    """Score the referenced rows against the gallery and package the results.

    ``true_label`` marks known probes; the rank of the true class uses
    descending score order with ties broken by gallery index.
    """
    out: list[ProbeResult] = []
    class_index = {c: i for i, c in enumerate(gallery.class_ids)}
    for ref in refs:
        scores = score_against_gallery(col.vectors[ref], gallery)
        statistic, predicted = decision_statistic(scores, k)
        if true_label is None:
            out.append(ProbeResult(statistic=statistic, predicted=predicted))
            continue
        s = scores.scores
        ti = class_index[true_label]
        rank = 1 + int(np.sum(s > s[ti])) + int(np.sum((s == s[ti]) & (np.arange(len(s)) < ti)))
        out.append(
            ProbeResult(
                statistic=statistic,
                predicted=predicted,
                true_label=true_label,
                correct=predicted == true_label,
                rank_of_true=rank,
            )
        )
    return out


def calibrate_on_split(
    col: EmbeddingCollection,
    split: ProtocolSplit,
    k: int,
    criterion: str = CRITERION_MAX_CCR_MINUS_FPR,
    fpr_target: float | None = None,
) -> CalibrationResult:
    """Calibrate the decision threshold on the validation side of the split.

    Calibration-known probes and pseudo-unknown samples are scored against a
    calibration-only gallery. k is clamped to that gallery's size: the
    validation gallery is deliberately small and must not reject a k that the
    test gallery supports.
    """
    cal_gallery = enroll_gallery(col, split, split.calibration_known_classes)
    k_cal = min(k, len(cal_gallery))
    known_records = []
    for c in split.calibration_known_classes:
        for ref in split.probes[c]:
            known_records.append(
                (score_against_gallery(col.vectors[ref], cal_gallery), c)
            )
    unknown_records = []
    for c in split.pseudo_unknown_classes:
        for sample in split.class_samples[c]:
            unknown_records.append(
                score_against_gallery(col.vectors[sample.ref], cal_gallery)
            )
    cal = CalibrationSet(
        known_records=tuple(known_records), unknown_records=tuple(unknown_records)
    )
    return calibrate_threshold(cal, k=k_cal, criterion=criterion, fpr_target=fpr_target)


def _mean_query_time_ms(
    col: EmbeddingCollection, gallery: Gallery, refs, rule: DecisionRule
) -> float:
    if not refs:
        return float("nan")
    start = time.perf_counter()
    for ref in refs:
        decide(col.vectors[ref], gallery, rule)
    return (time.perf_counter() - start) * 1000.0 / len(refs)


def execute_protocol(
    col: EmbeddingCollection,
    split: ProtocolSplit,
    k: int = 1,
    criterion: str = CRITERION_MAX_CCR_MINUS_FPR,
    fpr_target: float | None = None,
) -> EvalReport:
    """Enrollment, calibration, and testing over a completed split.

    Test probes from enrolled classes are the knowns; all samples of
    unknown-subject classes are the unknowns. All score-based metrics use the
    k-neighbour acceptance statistic, so decision-rule ablations flow through
    every metric.
    """
    gallery = enroll_gallery(col, split, split.test_classes)
    calibration = calibrate_on_split(col, split, k, criterion, fpr_target)
    tau = calibration.threshold

    known: list[ProbeResult] = []
    for c in split.test_classes:
        known.extend(probe_results(col, gallery, split.probes[c], k, true_label=c))
    unknown_refs = [
        sample.ref for c in split.unknown_classes for sample in split.class_samples[c]
    ]
    unknown = probe_results(col, gallery, unknown_refs, k)

    known_stats = [r.statistic for r in known]
    unknown_stats = [r.statistic for r in unknown]
    roc = roc_curve(known_stats, unknown_stats)
    oscr = oscr_curve(known, unknown)
    cmc_rates = cmc(known, max_rank=min(5, len(gallery)))
    known_acc, unknown_rej = operational_metrics(known, unknown, tau)

    rule = DecisionRule(k=k, threshold=tau)
    all_refs = [ref for c in split.test_classes for ref in split.probes[c]]
    all_refs.extend(unknown_refs)
    query_ms = _mean_query_time_ms(col, gallery, all_refs, rule)

    return EvalReport(
        oscr_area=oscr_area(oscr),
        auroc=auroc(roc),
        eer_percent=100.0 * eer(roc),
        rank1=float(cmc_rates[0]),
        rank5=float(cmc_rates[-1]),
        known_accuracy=known_acc,
        unknown_rejection_rate=unknown_rej,
        calibrated_tau=tau,
        mean_query_time_ms=query_ms,
        tpr_at_fpr=rate_at_fpr(roc, TPR_AT_FPR_TARGETS),
        roc=roc,
        oscr=oscr,
        calibration=calibration,
    )


@dataclass(frozen=True)
class HeadTrainingSpec:
    """Hyperparameters for the optional toy-head stage of a benchmark run."""

    learning_rate: float = 1.0
    epochs: int = 200
    sampler: SamplerConfig = SamplerConfig()
    init_seed: int = 0


def embed_with_head(raw: EmbeddingCollection, head: ToyHead) -> EmbeddingCollection:
    """Map a raw collection through the head into unit-norm embeddings."""
    return raw.with_vectors(head.embed(raw.vectors), normalized=True)


def run_end_to_end(
    cfg: SynthConfig,
    split_cfg: SplitConfig,
    rule_k: int = 1,
    loss: str | None = None,
    head_spec: HeadTrainingSpec = HeadTrainingSpec(),
    criterion: str = CRITERION_MAX_CCR_MINUS_FPR,
    fpr_target: float | None = None,
) -> EvalReport:
    """Generate synthetic data, optionally train the toy head (on train-class
    raw features only), and run the full protocol. Deterministic under the
    config seeds; only the timing field varies between runs."""
    col = generate_clusters(cfg)
    split = build_protocol(subjects_from_collection(col), split_cfg)
    if loss is not None:
        raw = generate_raw_features(cfg)
        train_rows = [
            sample.ref for c in split.train_classes for sample in split.class_samples[c]
        ]
        head = ToyHead.initialize(
            dim_in=raw.dimension,
            dim_out=cfg.dim,
            learning_rate=head_spec.learning_rate,
            epochs=head_spec.epochs,
            seed=head_spec.init_seed,
        )
        head, _ = train_toy_head(
            raw.take(train_rows), head, loss=loss, sampler=head_spec.sampler
        )
        col = embed_with_head(raw, head)
    return execute_protocol(
        col, split, k=rule_k, criterion=criterion, fpr_target=fpr_target
    )
