"""Open-set vein recognition toolkit.

Everything downstream of the feature extractor: prototype enrollment on the
unit hypersphere, thresholded maximum-similarity identification with
rejection, metric-learning losses with a toy trainable head, subject-disjoint
evaluation protocols, and the open-set metric suite (EER, AUROC, OSCR, CMC).
"""

from . import errors
from .collection import EmbeddingCollection
from .core import (
    ClassId,
    Gallery,
    Prototype,
    ScoreVector,
    compute_prototype,
    cosine_similarity,
    normalize,
    score_against_gallery,
)
from .decision import (
    CRITERION_FPR_AT_MOST,
    CRITERION_MAX_CCR_MINUS_FPR,
    CalibrationResult,
    CalibrationSet,
    Decision,
    DecisionRule,
    calibrate_threshold,
    decide,
    decision_statistic,
)
from .losses import (
    CenterConfig,
    LabeledBatch,
    TripletConfig,
    batch_hard_triplet_gradient,
    batch_hard_triplet_loss,
    center_loss,
    contrastive_loss,
    pairwise_distances,
)
from .metrics import (
    EvalReport,
    OscrCurve,
    ProbeResult,
    RocCurve,
    aggregate_reports,
    auroc,
    cmc,
    eer,
    operational_metrics,
    oscr_area,
    oscr_curve,
    rate_at_fpr,
    roc_curve,
)
from .pipeline import (
    HeadTrainingSpec,
    embed_with_head,
    enroll_gallery,
    execute_protocol,
    run_end_to_end,
)
from .protocol import (
    ProtocolSplit,
    Sample,
    SplitConfig,
    SubjectRecord,
    assign_enroll_probe,
    build_protocol,
    select_pseudo_unknowns,
    split_subjects,
    subjects_from_collection,
)
from .synth import SynthConfig, generate_clusters, generate_raw_features
from .training import SamplerConfig, ToyHead, pk_sample, train_toy_head

__version__ = "0.1.0"

__all__ = [
    "errors",
    "EmbeddingCollection",
    "ClassId",
    "Gallery",
    "Prototype",
    "ScoreVector",
    "compute_prototype",
    "cosine_similarity",
    "normalize",
    "score_against_gallery",
    "CRITERION_FPR_AT_MOST",
    "CRITERION_MAX_CCR_MINUS_FPR",
    "CalibrationResult",
    "CalibrationSet",
    "Decision",
    "DecisionRule",
    "calibrate_threshold",
    "decide",
    "decision_statistic",
    "CenterConfig",
    "LabeledBatch",
    "TripletConfig",
    "batch_hard_triplet_gradient",
    "batch_hard_triplet_loss",
    "center_loss",
    "contrastive_loss",
    "pairwise_distances",
    "EvalReport",
    "OscrCurve",
    "ProbeResult",
    "RocCurve",
    "aggregate_reports",
    "auroc",
    "cmc",
    "eer",
    "operational_metrics",
    "oscr_area",
    "oscr_curve",
    "rate_at_fpr",
    "roc_curve",
    "HeadTrainingSpec",
    "embed_with_head",
    "enroll_gallery",
    "execute_protocol",
    "run_end_to_end",
    "ProtocolSplit",
    "Sample",
    "SplitConfig",
    "SubjectRecord",
    "assign_enroll_probe",
    "build_protocol",
    "select_pseudo_unknowns",
    "split_subjects",
    "subjects_from_collection",
    "SynthConfig",
    "generate_clusters",
    "generate_raw_features",
    "SamplerConfig",
    "ToyHead",
    "pk_sample",
    "train_toy_head",
]
