"""Count preprocessing: library-size normalization, log1p, constant rescale."""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, IngestionError
from .sparse import SparseBlock

RESCALE = 10.0


def preprocess(block: SparseBlock, target_sum: float = 1e4) -> SparseBlock:
    """Counts -> log space: per cell v/libsize*target_sum, then log1p, then x10.

    All-zero cells pass through unchanged; scaling all counts of a cell by
    a constant leaves its output unchanged.
    """
    if np.any(block.values < 0):
        raise IngestionError("negative counts")
    values = block.values.astype(np.float64)
    libsize = block.row_sums()
    row_of = np.repeat(np.arange(block.rows), np.diff(block.indptr.astype(np.int64)))
    denom = libsize[row_of]
    scaled = np.zeros_like(values)
    nonzero = denom > 0
    scaled[nonzero] = values[nonzero] / denom[nonzero] * target_sum
    out = RESCALE * np.log1p(scaled)
    return SparseBlock(rows=block.rows, cols=block.cols, indptr=block.indptr.copy(),
                       indices=block.indices.copy(), values=out.astype(np.float32))


def gene_variances(blocks) -> np.ndarray:
    """Per-gene variance pooled over all cells of the given sparse blocks."""
    blocks = list(blocks)
    if not blocks:
        raise ArgumentError("need at least one block")
    cols = blocks[0].cols
    total = np.zeros(cols)
    total_sq = np.zeros(cols)
    n = 0
    for block in blocks:
        if block.cols != cols:
            raise IngestionError("blocks disagree on gene count")
        v = block.values.astype(np.float64)
        idx = block.indices.astype(np.int64)
        np.add.at(total, idx, v)
        np.add.at(total_sq, idx, v * v)
        n += block.rows
    mean = total / n
    return total_sq / n - mean * mean


def select_hvg(blocks, keep: int) -> np.ndarray:
    """Indices (ascending) of the ``keep`` highest-variance genes.

    Ties break toward the lower gene index.
    """
    var = gene_variances(blocks)
    if keep > var.size:
        raise ArgumentError(f"cannot keep {keep} of {var.size} genes")
    order = np.argsort(-var, kind="stable")
    return np.sort(order[:keep])


def subset_genes(block: SparseBlock, gene_idx: np.ndarray) -> SparseBlock:
    """Restrict a block to the given (sorted) gene subset, renumbering columns."""
    gene_idx = np.asarray(gene_idx, dtype=np.int64)
    remap = -np.ones(block.cols, dtype=np.int64)
    remap[gene_idx] = np.arange(gene_idx.size)
    idx = block.indices.astype(np.int64)
    keep = remap[idx] >= 0
    row_of = np.repeat(np.arange(block.rows), np.diff(block.indptr.astype(np.int64)))
    new_counts = np.bincount(row_of[keep], minlength=block.rows)
    indptr = np.zeros(block.rows + 1, dtype=np.uint64)
    np.cumsum(new_counts, out=indptr[1:])
    return SparseBlock(rows=block.rows, cols=gene_idx.size, indptr=indptr,
                       indices=remap[idx[keep]].astype(np.uint32),
                       values=block.values[keep])
