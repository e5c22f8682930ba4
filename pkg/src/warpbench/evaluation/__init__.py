"""Ranking metrics and statistical significance testing."""
from .metrics import (
    ACCURACY_METRICS,
    ALL_METRICS,
    EXPOSURE_METRICS,
    MetricError,
    MetricReport,
    MetricValue,
    RelevanceJudgments,
    compute_accuracy,
    compute_exposure,
    evaluate,
    gini,
    long_tail_mask,
    shannon_entropy,
)
from .significance import (
    Comparison,
    SignificanceError,
    TestResult,
    adjust_bh,
    adjust_bonferroni,
    compare_models,
    mann_whitney_u,
    paired_t_test,
    wilcoxon_signed_rank,
)

__all__ = [
    "ACCURACY_METRICS", "ALL_METRICS", "EXPOSURE_METRICS", "Comparison", "MetricError", "MetricReport",
    "MetricValue", "RelevanceJudgments", "SignificanceError", "TestResult", "adjust_bh", "adjust_bonferroni",
    "compare_models", "compute_accuracy", "compute_exposure", "evaluate", "gini", "long_tail_mask",
    "mann_whitney_u", "paired_t_test", "shannon_entropy", "wilcoxon_signed_rank",
]
