"""Population-level evaluation metrics for perturbation predictions."""

from .metrics import (
    DEResult,
    DeltaEffect,
    EvalConfig,
    METRIC_COLUMNS,
    MetricReport,
    PerturbationGroup,
    de_pattern_metrics,
    error_metrics,
    evaluate,
    log_fold_changes,
    match_control_count,
    pdcorr,
    pds,
    pseudobulk_delta,
    r_squared,
    ranking_metrics,
    run_de,
)
from .stats import (
    auprc,
    auroc,
    average_ranks,
    bh_adjust,
    exact_ranksum_p,
    pearson,
    ranksum_p,
    spearman,
    wilcoxon_pvals,
)

__all__ = [
    "DEResult",
    "DeltaEffect",
    "EvalConfig",
    "METRIC_COLUMNS",
    "MetricReport",
    "PerturbationGroup",
    "auprc",
    "auroc",
    "average_ranks",
    "bh_adjust",
    "de_pattern_metrics",
    "error_metrics",
    "evaluate",
    "exact_ranksum_p",
    "log_fold_changes",
    "match_control_count",
    "pdcorr",
    "pds",
    "pearson",
    "pseudobulk_delta",
    "r_squared",
    "ranking_metrics",
    "ranksum_p",
    "run_de",
    "spearman",
    "wilcoxon_pvals",
]
