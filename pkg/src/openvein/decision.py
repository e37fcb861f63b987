"""Open-set decision rule and threshold calibration.

A probe is accepted as its best-matching enrolled class when the acceptance
statistic reaches the threshold tau (boundary inclusive), otherwise rejected
as unknown. The statistic is the maximum prototype similarity for k=1, or the
mean of the k largest similarities for k>1; the predicted identity is always
the argmax class.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClassId, Gallery, ScoreVector, score_against_gallery
from .errors import EmptyCalibrationSideError, KTooLargeError

CRITERION_MAX_CCR_MINUS_FPR = "max_ccr_minus_fpr"
CRITERION_FPR_AT_MOST = "fpr_at_most"


@dataclass(frozen=True)
class DecisionRule:
    k: int = 1
    threshold: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class Decision:
    """Outcome for one probe: accept as ``class_id`` or reject as unknown."""

    accepted: bool
    class_id: ClassId | None        # None iff rejected
    score: float                    # the statistic compared against tau
    runner_up_score: float | None   # second-highest prototype similarity

    def __post_init__(self):
        if self.accepted and self.class_id is None:
            raise ValueError("accepted decision needs a class id")
        if not self.accepted and self.class_id is not None:
            raise ValueError("rejected decision must not carry a class id")


def decision_statistic(scores: ScoreVector, k: int = 1) -> tuple[float, ClassId]:
    """Acceptance statistic and predicted class for a score vector.

    k=1: the maximum score. k>1: the arithmetic mean of the k largest scores.
    The predicted class is the argmax either way (lowest gallery index on
    exact ties), so k only changes the statistic, not the identification.
    """
    values = scores.scores
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(values):
        raise KTooLargeError(f"k={k} exceeds gallery size {len(values)}")
    best = int(np.argmax(values))
    predicted = scores.class_ids[best]
    if k == 1:
        return float(values[best]), predicted
    top_k = np.sort(values)[-k:]
    return float(np.mean(top_k)), predicted


def decide(z_q, gallery: Gallery, rule: DecisionRule) -> Decision:
    """Score a probe against the gallery and apply the thresholded rule.

    A statistic exactly equal to the threshold is an accept.
    """
    scores = score_against_gallery(z_q, gallery)
    statistic, predicted = decision_statistic(scores, rule.k)
    runner_up = None
    if len(scores) >= 2:
        runner_up = float(np.sort(scores.scores)[-2])
    if statistic >= rule.threshold:
        return Decision(
            accepted=True, class_id=predicted, score=statistic, runner_up_score=runner_up
        )
    return Decision(
        accepted=False, class_id=None, score=statistic, runner_up_score=runner_up
    )


@dataclass(frozen=True)
class CalibrationSet:
    """Validation scores for threshold calibration.

    ``known_records`` pair a score vector with the true (enrolled) class;
    ``unknown_records`` come from pseudo-unknown identities absent from the
    calibration gallery.
    """

    known_records: tuple[tuple[ScoreVector, ClassId], ...]
    unknown_records: tuple[ScoreVector, ...]

    def __post_init__(self):
        object.__setattr__(self, "known_records", tuple(self.known_records))
        object.__setattr__(self, "unknown_records", tuple(self.unknown_records))


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    criterion: str
    achieved_ccr: float
    achieved_fpr: float
    sweep_trace: tuple[tuple[float, float, float], ...]  # (tau, CCR, FPR) ascending
    fpr_target: float | None = None
    target_unattainable: bool = False


def _candidate_grid(statistics: np.ndarray) -> np.ndarray:
    """Sorted candidates: observed statistics, midpoints between consecutive
    distinct values, and sentinels below the minimum / above the maximum.

    CCR and FPR only change at observed values, so this grid attains the
    exact optimum over all possible real thresholds.
    """
    distinct = np.unique(statistics)
    midpoints = (distinct[:-1] + distinct[1:]) / 2.0
    lo = distinct[0] - 1.0
    hi = distinct[-1] + 1.0
    return np.unique(np.concatenate([[lo], distinct, midpoints, [hi]]))


def calibrate_threshold(
    cal: CalibrationSet,
    k: int = 1,
    criterion: str = CRITERION_MAX_CCR_MINUS_FPR,
    fpr_target: float | None = None,
) -> CalibrationResult:
    """Sweep candidate thresholds and pick the best per the given criterion.

    CCR(tau) is the fraction of known records accepted AND classified
    correctly; FPR(tau) is the fraction of unknown records accepted.
    ``max_ccr_minus_fpr`` maximizes CCR - FPR (lowest tau on ties);
    ``fpr_at_most`` takes the tau with FPR <= target that maximizes CCR.
    """
    if not cal.known_records:
        raise EmptyCalibrationSideError("no known records to calibrate on")
    if not cal.unknown_records:
        raise EmptyCalibrationSideError("no unknown records to calibrate on")
    if criterion not in (CRITERION_MAX_CCR_MINUS_FPR, CRITERION_FPR_AT_MOST):
        raise ValueError(f"unknown criterion {criterion!r}")
    if criterion == CRITERION_FPR_AT_MOST and fpr_target is None:
        raise ValueError("fpr_at_most criterion needs an fpr_target")

    known_stats = np.empty(len(cal.known_records))
    known_correct = np.empty(len(cal.known_records), dtype=bool)
    for i, (scores, true_class) in enumerate(cal.known_records):
        statistic, predicted = decision_statistic(scores, k)
        known_stats[i] = statistic
        known_correct[i] = predicted == true_class
    unknown_stats = np.array(
        [decision_statistic(scores, k)[0] for scores in cal.unknown_records]
    )

    grid = _candidate_grid(np.concatenate([known_stats, unknown_stats]))
    ccr = np.array(
        [np.mean((known_stats >= t) & known_correct) for t in grid]
    )
    fpr = np.array([np.mean(unknown_stats >= t) for t in grid])
    trace = tuple(
        (float(t), float(c), float(f)) for t, c, f in zip(grid, ccr, fpr)
    )

    if criterion == CRITERION_MAX_CCR_MINUS_FPR:
        objective = ccr - fpr
        best = int(np.argmax(objective))  # first = lowest tau on ties
        return CalibrationResult(
            threshold=float(grid[best]),
            criterion=criterion,
            achieved_ccr=float(ccr[best]),
            achieved_fpr=float(fpr[best]),
            sweep_trace=trace,
        )

    qualifying = np.flatnonzero(fpr <= fpr_target)
    if qualifying.size == 0:
        # Unreachable with the above-maximum sentinel unless the target is
        # negative; flagged rather than silently weakened.
        return CalibrationResult(
            threshold=float(grid[-1]),
            criterion=criterion,
            achieved_ccr=float(ccr[-1]),
            achieved_fpr=float(fpr[-1]),
            sweep_trace=trace,
            fpr_target=fpr_target,
            target_unattainable=True,
        )
    best_ccr = np.max(ccr[qualifying])
    best = int(qualifying[np.flatnonzero(ccr[qualifying] == best_ccr)[0]])
    return CalibrationResult(
        threshold=float(grid[best]),
        criterion=criterion,
        achieved_ccr=float(ccr[best]),
        achieved_fpr=float(fpr[best]),
        sweep_trace=trace,
        fpr_target=fpr_target,
    )
