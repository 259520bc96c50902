"""CSR-style sparse expression blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import IngestionError


@dataclass
class SparseBlock:
    """Row-compressed sparse matrix: cells are rows, genes are columns.

    Offsets are uint64, column indices uint32 (strictly increasing within
    each row), values float32. This mirrors the on-disk shard layout.
    """

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.uint64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.uint32)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.validate()

    def validate(self) -> None:
        if self.indptr.shape != (self.rows + 1,):
            raise IngestionError("row offsets must have rows+1 entries")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr.astype(np.int64)) < 0):
            raise IngestionError("row offsets must start at 0 and be non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.values.shape != (nnz,):
            raise IngestionError("index/value lengths must equal the final offset")
        if nnz:
            if self.indices.max() >= self.cols:
                raise IngestionError("column index out of range")
            starts = self.indptr[:-1].astype(np.int64)
            ends = self.indptr[1:].astype(np.int64)
            idx = self.indices.astype(np.int64)
            increasing = np.ones(nnz, dtype=bool)
            increasing[1:] = np.diff(idx) > 0
            # row boundaries may restart the sequence
            increasing[starts[starts < nnz]] = True
            if not increasing.all():
                raise IngestionError("column indices must be strictly increasing within a row")
            del ends
        if not np.all(np.isfinite(self.values)):
            raise IngestionError("values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseBlock":
        dense = np.asarray(dense)
        if dense.ndim != 2:
            raise IngestionError("expected a 2-D matrix")
        rows, cols = dense.shape
        mask = dense != 0
        counts = mask.sum(axis=1)
        indptr = np.zeros(rows + 1, dtype=np.uint64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.nonzero(mask)[1].astype(np.uint32)
        values = dense[mask].astype(np.float32)
        return cls(rows=rows, cols=cols, indptr=indptr, indices=indices, values=values)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=dtype)
        row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr.astype(np.int64)))
        out[row_of, self.indices.astype(np.int64)] = self.values
        return out

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(self.rows)
        row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr.astype(np.int64)))
        np.add.at(sums, row_of, self.values.astype(np.float64))
        return sums
