"""Population-level evaluation of predicted perturbation responses.

Each perturbation condition contributes a group of (perturbed, control,
predicted) cells over a shared gene universe. Expression-accuracy metrics
compare pseudobulk delta effects; differential-expression metrics compare
rank-sum significance patterns. Metrics undefined for a condition (empty
reference sets, single-class labels) are skipped and excluded from means.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, IngestionError
from .stats import auprc, auroc, bh_adjust, pearson, spearman, wilcoxon_pvals

_P_FLOOR = 1e-300  # keeps -log(p_adj) finite

METRIC_COLUMNS = (
    "MSE", "MAE", "MSE_per_gene", "MAE_per_gene", "R2", "PDCorr",
    "PDS_L1", "PDS_L2", "PDS_cos", "DEOver", "DEPrec", "DirAgr",
    "LFCSpear", "AUROC", "AUPRC",
)


@dataclass
class PerturbationGroup:
    """Cells of one evaluated condition.

    The control set is shared between predicted and ground-truth
    statistics, and group sizes are equalized at ingestion.
    """

    key: str
    pert: np.ndarray
    ctrl: np.ndarray
    pred: np.ndarray

    def __post_init__(self):
        self.pert = np.asarray(self.pert, dtype=np.float64)
        self.ctrl = np.asarray(self.ctrl, dtype=np.float64)
        self.pred = np.asarray(self.pred, dtype=np.float64)
        for name, arr in (("pert", self.pert), ("ctrl", self.ctrl), ("pred", self.pred)):
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise IngestionError(f"{name} cells must be a non-empty 2-D matrix")
            if not np.all(np.isfinite(arr)):
                raise IngestionError(f"{name} cells contain non-finite values")
        genes = self.pert.shape[1]
        if self.ctrl.shape[1] != genes or self.pred.shape[1] != genes:
            raise IngestionError("gene universes disagree within a group")
        if self.ctrl.shape[0] != self.pert.shape[0]:
            raise IngestionError("control and perturbed cell counts must match")
        if self.pred.shape[0] != self.pert.shape[0]:
            raise IngestionError("predicted and perturbed cell counts must match")

    @property
    def genes(self) -> int:
        return self.pert.shape[1]


def match_control_count(ctrl: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Subsample (or upsample, with replacement) controls to exactly n cells."""
    ctrl = np.asarray(ctrl)
    if ctrl.shape[0] == n:
        return ctrl
    idx = rng.choice(ctrl.shape[0], size=n, replace=ctrl.shape[0] < n)
    return ctrl[idx]


@dataclass(frozen=True)
class DeltaEffect:
    """Pseudobulk perturbation effects of one group (shared control mean)."""

    true: np.ndarray
    pred: np.ndarray


def pseudobulk_delta(group: PerturbationGroup) -> DeltaEffect:
    """Column-mean effects: perturbed minus control, same control both sides."""
    ctrl_mean = group.ctrl.mean(axis=0)
    return DeltaEffect(true=group.pert.mean(axis=0) - ctrl_mean,
                       pred=group.pred.mean(axis=0) - ctrl_mean)


def pdcorr(deltas: list[DeltaEffect]) -> float:
    """Mean Pearson correlation between predicted and true effects."""
    if not deltas:
        raise ArgumentError("need at least one delta pair")
    return float(np.mean([pearson(d.pred, d.true) for d in deltas]))


def _distance(a: np.ndarray, b: np.ndarray, kind: str) -> float:
    if kind == "L1":
        return float(np.abs(a - b).sum())
    if kind == "L2":
        return float(np.sqrt(((a - b) ** 2).sum()))
    if kind == "cos":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            return 1.0
        return 1.0 - float(a @ b) / (na * nb)
    raise ArgumentError(f"unknown distance {kind!r}")


def pds(deltas: list[DeltaEffect], distance: str = "L2") -> float:
    """Perturbation discrimination: how often a prediction sits closer to a
    foreign truth than to its own. Ties do not count against a prediction."""
    m = len(deltas)
    if m < 2:
        raise ArgumentError("discrimination needs at least two conditions")
    ranks = pds_ranks(deltas, distance)
    return 1.0 - float(np.mean(ranks)) / m


def pds_ranks(deltas: list[DeltaEffect], distance: str) -> np.ndarray:
    m = len(deltas)
    ranks = np.zeros(m)
    for lam in range(m):
        own = _distance(deltas[lam].pred, deltas[lam].true, distance)
        ranks[lam] = sum(
            1 for p in range(m)
            if p != lam and _distance(deltas[lam].pred, deltas[p].true, distance) < own
        )
    return ranks


def error_metrics(deltas: list[DeltaEffect]) -> tuple[float, float]:
    """(MAE, MSE) of the delta effects, mean over conditions."""
    if not deltas:
        raise ArgumentError("need at least one delta pair")
    mae = float(np.mean([np.abs(d.pred - d.true).sum() for d in deltas]))
    mse = float(np.mean([((d.pred - d.true) ** 2).sum() for d in deltas]))
    return mae, mse


def r_squared(pred: np.ndarray, true: np.ndarray) -> float:
    """1 - SSE/SST against the empirical mean baseline; 0 when SST is 0."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if true.size < 2:
        raise ArgumentError("need at least two entries")
    sst = float(((true - true.mean()) ** 2).sum())
    if sst == 0.0:
        return 0.0
    sse = float(((true - pred) ** 2).sum())
    return 1.0 - sse / sst


def log_fold_changes(pert_mean: np.ndarray, ctrl_mean: np.ndarray, eps: float) -> np.ndarray:
    """Signed per-gene log2 fold changes with additive stabilizer."""
    return np.log2((np.asarray(pert_mean) + eps) / (np.asarray(ctrl_mean) + eps))


@dataclass(frozen=True)
class DEResult:
    """Per-gene differential-expression summary for one group side."""

    pvals: np.ndarray
    padj: np.ndarray
    lfc: np.ndarray
    alpha: float = 0.05

    @property
    def significant(self) -> np.ndarray:
        return self.padj < self.alpha

    def top_k(self, k: int) -> set[int]:
        """Top-k genes by absolute fold change, ties toward lower index."""
        order = np.argsort(-np.abs(self.lfc), kind="stable")
        return set(order[:k].tolist())


def run_de(pert: np.ndarray, ctrl: np.ndarray, alpha: float = 0.05,
           lfc_eps: float = 1e-6, exact_limit: int = 12) -> DEResult:
    pvals = wilcoxon_pvals(pert, ctrl, exact_limit)
    return DEResult(pvals=pvals, padj=bh_adjust(pvals),
                    lfc=log_fold_changes(pert.mean(axis=0), ctrl.mean(axis=0), lfc_eps),
                    alpha=alpha)


def de_pattern_metrics(truth: DEResult, pred: DEResult) -> dict[str, float | None]:
    """Overlap/precision at the significant-set sizes, sign agreement on the
    significant intersection, and fold-change rank correlation.

    Entries are None when their reference set is empty for this condition.
    """
    if truth.lfc.size != pred.lfc.size:
        raise ArgumentError("gene universes disagree")
    out: dict[str, float | None] = {}
    k_true = int(truth.significant.sum())
    k_pred = int(pred.significant.sum())
    out["DEOver"] = (len(truth.top_k(k_true) & pred.top_k(k_true)) / k_true
                     if k_true > 0 else None)
    out["DEPrec"] = (len(truth.top_k(k_pred) & pred.top_k(k_pred)) / k_pred
                     if k_pred > 0 else None)
    both = truth.significant & pred.significant
    if both.any():
        match = np.sign(truth.lfc[both]) == np.sign(pred.lfc[both])
        out["DirAgr"] = float(match.mean())
    else:
        out["DirAgr"] = None
    sig = truth.significant
    out["LFCSpear"] = spearman(truth.lfc[sig], pred.lfc[sig]) if sig.any() else None
    return out


def ranking_metrics(truth_labels: np.ndarray, pred_padj: np.ndarray
                    ) -> tuple[float | None, float | None]:
    """(AUROC, AUPRC) of predicted significance against truth labels.

    Scores are negative log adjusted p-values; single-class label vectors
    yield (None, None).
    """
    labels = np.asarray(truth_labels, dtype=bool)
    if labels.all() or not labels.any():
        return None, None
    scores = -np.log(np.maximum(np.asarray(pred_padj, dtype=np.float64), _P_FLOOR))
    return auroc(labels, scores), auprc(labels, scores)


@dataclass(frozen=True)
class EvalConfig:
    alpha: float = 0.05
    lfc_eps: float = 1e-6
    exact_limit: int = 12
    n_jobs: int = 1


@dataclass
class MetricReport:
    """All metrics per condition plus their mean over conditions."""

    per_condition: dict[str, dict[str, float | None]]
    mean: dict[str, float | None]
    genes: int
    conditions: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "genes": self.genes,
            "conditions": self.conditions,
            "per_condition": self.per_condition,
            "mean": self.mean,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        return cls(per_condition=doc["per_condition"], mean=doc["mean"],
                   genes=doc["genes"], conditions=doc["conditions"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(("condition",) + METRIC_COLUMNS)
        for key in self.conditions:
            row = self.per_condition[key]
            writer.writerow([key] + [_fmt(row.get(c)) for c in METRIC_COLUMNS])
        writer.writerow(["MEAN"] + [_fmt(self.mean.get(c)) for c in METRIC_COLUMNS])
        return buf.getvalue()


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _per_condition_metrics(group: PerturbationGroup, cfg: EvalConfig
                           ) -> dict[str, float | None]:
    delta = pseudobulk_delta(group)
    diff = delta.pred - delta.true
    row: dict[str, float | None] = {
        "MAE": float(np.abs(diff).sum()),
        "MSE": float((diff ** 2).sum()),
        "PDCorr": pearson(delta.pred, delta.true),
        "R2": r_squared(group.pred.mean(axis=0), group.pert.mean(axis=0)),
    }
    row["MAE_per_gene"] = row["MAE"] / group.genes
    row["MSE_per_gene"] = row["MSE"] / group.genes
    truth_de = run_de(group.pert, group.ctrl, cfg.alpha, cfg.lfc_eps, cfg.exact_limit)
    pred_de = run_de(group.pred, group.ctrl, cfg.alpha, cfg.lfc_eps, cfg.exact_limit)
    row.update(de_pattern_metrics(truth_de, pred_de))
    row["AUROC"], row["AUPRC"] = ranking_metrics(truth_de.significant, pred_de.padj)
    return row


def evaluate(groups: list[PerturbationGroup], cfg: EvalConfig | None = None) -> MetricReport:
    """Run the whole suite; per-condition work may run in parallel but the
    reduction order is fixed (sorted by condition key), so reports are
    identical either way."""
    if cfg is None:
        cfg = EvalConfig()
    if not groups:
        raise ArgumentError("need at least one group")
    genes = groups[0].genes
    for g in groups:
        if g.genes != genes:
            raise IngestionError(f"group {g.key!r} disagrees on the gene universe")
    keys = [g.key for g in groups]
    if len(set(keys)) != len(keys):
        raise IngestionError("duplicate group keys")
    ordered = sorted(groups, key=lambda g: g.key)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            rows = list(pool.map(lambda g: _per_condition_metrics(g, cfg), ordered))
    else:
        rows = [_per_condition_metrics(g, cfg) for g in ordered]

    deltas = [pseudobulk_delta(g) for g in ordered]
    m = len(ordered)
    if m >= 2:
        for kind in ("L1", "L2", "cos"):
            ranks = pds_ranks(deltas, kind)
            for i, row in enumerate(rows):
                row[f"PDS_{kind}"] = 1.0 - ranks[i] / m
    else:
        for row in rows:
            row["PDS_L1"] = row["PDS_L2"] = row["PDS_cos"] = None

    per_condition = {g.key: row for g, row in zip(ordered, rows)}
    mean: dict[str, float | None] = {}
    for col in METRIC_COLUMNS:
        defined = [row[col] for row in rows if row.get(col) is not None]
        mean[col] = float(np.mean(defined)) if defined else None
    return MetricReport(per_condition=per_condition, mean=mean, genes=genes,
                        conditions=[g.key for g in ordered])
