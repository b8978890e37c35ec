"""Decision-level fusion of per-class probability estimates from several classifiers."""

from .fusion import (
    METHODS,
    FusedScores,
    FusionConfig,
    borda_count,
    compute_ranks,
    final_decision,
    fuse,
    fuse_max,
    fuse_median,
    fuse_product,
    fuse_sum,
    fuse_weighted_product,
    fuse_weighted_sum,
    majority_vote,
    reciprocal_rank_fusion,
    weighted_borda_count,
)
from .harness import ExperimentPlan, EvaluationReport, emit_report, per_class_report, run_plan, select_modalities
from .ingestion import LabeledSample, ModalityRegistry, load_catalog, load_predictions, validate_sample
from .metrics import ClassCatalog, EvaluationOutcome, assign_groups, balanced_accuracy, topk_hit, unbalanced_accuracy
from .synth import ModalityProfile, generate

__version__ = "0.1.0"
