"""Verification and open-set evaluation metrics.

ROC/AUROC/EER treat known-vs-unknown detection as a verification task on the
acceptance statistics. The OSCR curve plots the correct-classification rate
of knowns against the false-positive rate on unknowns as the threshold
varies; CMC ranks measure pure identification, ignoring the threshold.

Curve knots sit exactly at the observed statistic values, so trapezoidal
areas match pair-counting oracles to rounding error, and ties between the
two sides land on a shared knot (the Mann-Whitney half-count convention).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ClassId
from .decision import CalibrationResult
from .errors import (
    EmptyInputError,
    EmptySideError,
    MissingRankError,
)


@dataclass(frozen=True)
class ProbeResult:
    """Outcome material for one probe: its acceptance statistic, the argmax
    class, and (for knowns) correctness and the rank of the true class."""

    statistic: float
    predicted: ClassId
    true_label: ClassId | None = None      # None for unknown probes
    correct: bool | None = None            # defined only for knowns
    rank_of_true: int | None = None        # 1-based rank in descending scores

    def __post_init__(self):
        if self.true_label is not None:
            if self.correct is None:
                object.__setattr__(self, "correct", self.predicted == self.true_label)
            if self.correct and self.rank_of_true not in (None, 1):
                raise ValueError("a correct probe must have rank 1")


@dataclass(frozen=True)
class RocCurve:
    """Detection curve: (fpr, tpr) per threshold knot, from (0,0) to (1,1)."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray   # +inf sentinel first, then observed values desc

    def __post_init__(self):
        for name in ("fpr", "tpr", "thresholds"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.fpr.shape == self.tpr.shape == self.thresholds.shape):
            raise ValueError("curve arrays must share one shape")
        if np.any(np.diff(self.fpr) < 0) or np.any(np.diff(self.tpr) < 0):
            raise ValueError("curve must be monotone non-decreasing")
        if not (self.fpr[0] == 0.0 and self.tpr[0] == 0.0):
            raise ValueError("curve must start at (0, 0)")
        if not (self.fpr[-1] == 1.0 and self.tpr[-1] == 1.0):
            raise ValueError("curve must end at (1, 1)")

    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.tpr])


@dataclass(frozen=True)
class OscrCurve:
    """Open-set curve: correct-classification rate of knowns vs FPR on
    unknowns, per threshold knot, extended horizontally to fpr = 1."""

    fpr: np.ndarray
    ccr: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        for name in ("fpr", "ccr", "thresholds"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.fpr.shape == self.ccr.shape == self.thresholds.shape):
            raise ValueError("curve arrays must share one shape")
        if np.any(np.diff(self.fpr) < 0) or np.any(np.diff(self.ccr) < 0):
            raise ValueError("curve must be monotone non-decreasing")
        if self.fpr[0] != 0.0 or self.fpr[-1] != 1.0:
            raise ValueError("curve must span fpr 0 to 1")

    def points(self) -> np.ndarray:
        return np.column_stack([self.fpr, self.ccr])


def roc_curve(positive_scores, negative_scores) -> RocCurve:
    """ROC over known-probe statistics (positives) and unknown-probe
    statistics (negatives): one knot per distinct observed value, descending,
    with TPR/FPR the fractions of scores >= the knot."""
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise EmptySideError("roc_curve needs nonempty positives and negatives")
    knots = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    # count(x >= t) via searchsorted on the ascending copies
    tpr = (pos.size - np.searchsorted(pos_sorted, knots, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_sorted, knots, side="left")) / neg.size
    return RocCurve(
        fpr=np.concatenate([[0.0], fpr]),
        tpr=np.concatenate([[0.0], tpr]),
        thresholds=np.concatenate([[np.inf], knots]),
    )


def auroc(curve: RocCurve) -> float:
    """Trapezoidal area under the ROC curve.

    Equals the Mann-Whitney statistic (fraction of positive/negative pairs
    where the positive wins, ties counted half) up to rounding.
    """
    return _trapezoid(curve.fpr, curve.tpr)


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    terms = (x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0
    return float(math.fsum(terms.tolist()))


def eer(curve: RocCurve) -> float:
    """Equal error rate: the value where FPR equals FNR (1 - TPR).

    Returned in [0, 1]; report as percent by multiplying by 100. If no knot
    is exact, linearly interpolate between the adjacent knots where
    FPR - FNR changes sign.
    """
    fpr = curve.fpr
    fnr = 1.0 - curve.tpr
    diff = fpr - fnr          # non-decreasing: -1 at (0,0), +1 at (1,1)
    idx = int(np.argmax(diff >= 0.0))
    if diff[idx] == 0.0:
        return float(fpr[idx])
    f0, f1 = fpr[idx - 1], fpr[idx]
    n0, n1 = fnr[idx - 1], fnr[idx]
    t = (n0 - f0) / ((f1 - f0) - (n1 - n0))
    return float(f0 + t * (f1 - f0))


def _statistics(results) -> np.ndarray:
    return np.array([r.statistic for r in results], dtype=np.float64)


def oscr_curve(known, unknown) -> OscrCurve:
    """OSCR curve over known and unknown probe results.

    At each threshold knot (descending observed statistics from both sides):
    CCR = fraction of knowns accepted and correctly classified, FPR =
    fraction of unknowns accepted.
    """
    known = tuple(known)
    unknown = tuple(unknown)
    if not known or not unknown:
        raise EmptySideError("oscr_curve needs nonempty known and unknown results")
    known_stats = _statistics(known)
    known_correct = np.array([bool(r.correct) for r in known])
    unknown_stats = _statistics(unknown)

    knots = np.unique(np.concatenate([known_stats, unknown_stats]))[::-1]
    ccr = np.array(
        [np.mean((known_stats >= t) & known_correct) for t in knots]
    )
    fpr = np.array([np.mean(unknown_stats >= t) for t in knots])
    fpr = np.concatenate([[0.0], fpr])
    ccr = np.concatenate([[0.0], ccr])
    thresholds = np.concatenate([[np.inf], knots])
    if fpr[-1] < 1.0:   # extend horizontally to fpr = 1
        fpr = np.concatenate([fpr, [1.0]])
        ccr = np.concatenate([ccr, [ccr[-1]]])
        thresholds = np.concatenate([thresholds, [-np.inf]])
    return OscrCurve(fpr=fpr, ccr=ccr, thresholds=thresholds)


def oscr_area(curve: OscrCurve) -> float:
    """Trapezoidal area under the OSCR curve over the full fpr range [0, 1]."""
    return _trapezoid(curve.fpr, curve.ccr)


def rate_at_fpr(curve, targets) -> dict[float, float]:
    """Curve height at each FPR target, conservative step convention:
    the best y among knots with fpr <= target, 0.0 when none qualify."""
    fpr = curve.fpr
    y = curve.tpr if isinstance(curve, RocCurve) else curve.ccr
    out: dict[float, float] = {}
    for target in targets:
        if not 0.0 < target < 1.0:
            raise ValueError(f"fpr target must be in (0, 1), got {target}")
        mask = fpr <= target
        out[target] = float(np.max(y[mask])) if np.any(mask) else 0.0
    return out


def cmc(known, max_rank: int) -> np.ndarray:
    """Cumulative match rates: entry r (0-based) is the fraction of known
    probes whose true class ranks within the top r+1, threshold ignored."""
    known = tuple(known)
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    ranks = []
    for r in known:
        if r.rank_of_true is None:
            raise MissingRankError("a known probe result has no rank_of_true")
        ranks.append(r.rank_of_true)
    ranks_arr = np.asarray(ranks)
    return np.array(
        [np.mean(ranks_arr <= r) for r in range(1, max_rank + 1)], dtype=np.float64
    )


def operational_metrics(known, unknown, tau: float) -> tuple[float, float]:
    """(known accuracy, unknown rejection rate) at a fixed threshold.

    Known accuracy counts probes accepted (statistic >= tau) and correctly
    classified; rejection rate counts unknowns with statistic < tau.
    """
    if not math.isfinite(tau):
        raise ValueError(f"tau must be finite, got {tau}")
    known = tuple(known)
    unknown = tuple(unknown)
    known_acc = 0.0
    if known:
        known_acc = float(
            np.mean([(r.statistic >= tau) and bool(r.correct) for r in known])
        )
    rejection = 0.0
    if unknown:
        rejection = float(np.mean([r.statistic < tau for r in unknown]))
    return known_acc, rejection


# Scalar fields averaged by aggregate_reports; curves are reported per split.
_SCALAR_FIELDS = (
    "oscr_area",
    "auroc",
    "eer_percent",
    "rank1",
    "rank5",
    "known_accuracy",
    "unknown_rejection_rate",
    "calibrated_tau",
    "mean_query_time_ms",
)


@dataclass(frozen=True)
class EvalReport:
    """Scalar summary of one evaluation run plus its curves.

    ``calibration`` carries the full threshold-calibration result (criterion,
    achieved rates, sweep trace) when the run included that phase; only its
    ``calibrated_tau`` scalar participates in aggregation.
    """

    oscr_area: float
    auroc: float
    eer_percent: float
    rank1: float
    rank5: float
    known_accuracy: float
    unknown_rejection_rate: float
    calibrated_tau: float
    mean_query_time_ms: float
    tpr_at_fpr: dict[float, float] = field(default_factory=dict)
    roc: RocCurve | None = None
    oscr: OscrCurve | None = None
    calibration: CalibrationResult | None = None

    def __post_init__(self):
        for name in ("oscr_area", "auroc", "rank1", "rank5", "known_accuracy",
                     "unknown_rejection_rate"):
            value = getattr(self, name)
            if not -1e-9 <= value <= 1.0 + 1e-9:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if not -1e-9 <= self.eer_percent <= 100.0 + 1e-9:
            raise ValueError(f"eer_percent={self.eer_percent} outside [0, 100]")

    def scalars(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in _SCALAR_FIELDS}


def aggregate_reports(reports) -> tuple[EvalReport, dict[str, float]]:
    """Mean report over splits plus per-field sample standard deviations.

    Curves are excluded from averaging (use the per-split reports); a single
    report aggregates to itself with zero deviations.
    """
    reports = tuple(reports)
    if not reports:
        raise EmptyInputError("no reports to aggregate")

    def sd(values: np.ndarray) -> float:
        if len(values) < 2 or np.all(values == values[0]):
            return 0.0
        return float(np.std(values, ddof=1))

    def mean(values: np.ndarray) -> float:
        # Identical inputs average to themselves exactly.
        if np.all(values == values[0]):
            return float(values[0])
        return math.fsum(values.tolist()) / len(values)

    means: dict[str, float] = {}
    deviations: dict[str, float] = {}
    for name in _SCALAR_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        means[name] = mean(values)
        deviations[name] = sd(values)

    targets = sorted(reports[0].tpr_at_fpr)
    tpr_means: dict[float, float] = {}
    for target in targets:
        values = np.array([r.tpr_at_fpr[target] for r in reports], dtype=np.float64)
        tpr_means[target] = mean(values)
        deviations[f"tpr_at_fpr[{target:g}]"] = sd(values)

    mean_report = EvalReport(tpr_at_fpr=tpr_means, roc=None, oscr=None, **means)
    return mean_report, deviations
