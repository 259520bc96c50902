"""Statistical kernels for the evaluation suite.

Hand-rolled so every routine has a brute-force test oracle: rank-sum
p-values (exact enumeration for small tie-free samples, tie-corrected
normal approximation otherwise), step-up FDR adjustment, rank
correlations, and ranking curves.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ArgumentError


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_ranksum_counts(n1: int, n2: int) -> np.ndarray:
    """counts[s] = number of n1-subsets of ranks 1..n1+n2 with rank sum s."""
    n = n1 + n2
    max_sum = n1 * n + 1
    counts = np.zeros((n1 + 1, max_sum), dtype=np.float64)
    counts[0, 0] = 1.0
    for rank in range(1, n + 1):
        for k in range(min(rank, n1), 0, -1):
            counts[k, rank:] += counts[k - 1, :-rank or None]
    return counts[n1]


def exact_ranksum_p(n1: int, n2: int, w1: float) -> float:
    """Two-sided exact p for the rank sum of sample 1 (no ties allowed)."""
    counts = _exact_ranksum_counts(n1, n2)
    total = counts.sum()
    sums = np.arange(counts.size)
    w = int(round(w1))
    p_le = counts[sums <= w].sum() / total
    p_ge = counts[sums >= w].sum() / total
    return min(1.0, 2.0 * min(p_le, p_ge))


def normal_sf(z: float) -> float:
    """Upper-tail standard normal probability."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def ranksum_p(a: np.ndarray, b: np.ndarray, exact_limit: int = 12) -> float:
    """Two-sided rank-sum p-value for one gene.

    Exact enumeration when the pooled sample is small and tie-free;
    otherwise a normal approximation with tie-corrected variance and a 0.5
    continuity correction. A fully tied gene yields p = 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n1, n2 = a.size, b.size
    if n1 < 1 or n2 < 1:
        raise ArgumentError("both samples need at least one observation")
    pooled = np.concatenate([a, b])
    n = n1 + n2
    ranks = average_ranks(pooled)
    w1 = ranks[:n1].sum()
    has_ties = np.unique(pooled).size < n
    if n <= exact_limit and not has_ties:
        return exact_ranksum_p(n1, n2, w1)
    mean = n1 * (n + 1) / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(np.float64) ** 3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(w1 - mean) - 0.5) / math.sqrt(var)
    if z < 0:
        z = 0.0
    return min(1.0, 2.0 * normal_sf(z))


def wilcoxon_pvals(pert: np.ndarray, ctrl: np.ndarray, exact_limit: int = 12) -> np.ndarray:
    """Per-gene two-sided rank-sum p-values: (n1, G) x (n2, G) -> (G,)."""
    pert = np.asarray(pert, dtype=np.float64)
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if pert.ndim != 2 or ctrl.ndim != 2 or pert.shape[1] != ctrl.shape[1]:
        raise ArgumentError("expected two cell-by-gene matrices over the same genes")
    return np.array([ranksum_p(pert[:, g], ctrl[:, g], exact_limit)
                     for g in range(pert.shape[1])])


def bh_adjust(p: np.ndarray) -> np.ndarray:
    """Benjamini-Hochberg step-up adjustment, order preserved."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        return p.copy()
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ArgumentError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * (m / np.arange(1, m + 1))
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    np.minimum(q, 1.0, out=q)
    out = np.empty(m)
    out[order] = q
    return out


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; zero-variance input yields 0 by convention."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ArgumentError("vectors must have equal length")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return 0.0
    return float(xc @ yc) / denom


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks for ties; 0 on
    zero-variance rank vectors."""
    return pearson(average_ranks(x), average_ranks(y))


def auroc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic (ties count half)."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int(labels.sum())
    neg = labels.size - pos
    if pos == 0 or neg == 0:
        raise ArgumentError("AUROC needs both classes")
    ranks = average_ranks(scores)
    return (ranks[labels].sum() - pos * (pos + 1) / 2.0) / (pos * neg)


def auprc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Area under the precision-recall curve by step interpolation.

    Thresholds sweep the distinct scores in descending order; tied scores
    enter together.
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    pos = int(labels.sum())
    if pos == 0 or pos == labels.size:
        raise ArgumentError("AUPRC needs both classes")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    area = 0.0
    tp = 0
    fp = 0
    recall_prev = 0.0
    i = 0
    n = labels.size
    while i < n:
        j = i
        while j + 1 < n and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int(sorted_labels[i:j + 1].sum())
        fp += (j - i + 1) - int(sorted_labels[i:j + 1].sum())
        recall = tp / pos
        precision = tp / (tp + fp)
        area += (recall - recall_prev) * precision
        recall_prev = recall
        i = j + 1
    return area
