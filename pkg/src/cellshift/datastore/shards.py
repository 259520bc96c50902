"""Condition-grouped shard files and their JSON manifest.

Each condition bucket lives in its own file: a fixed 32-byte little-endian
header (magic ``VCSB``, version, rows, cols, nnz, CRC32 of the payload)
followed by the row offsets, column indices, and values. Controls are
stored in a separate bucket per (cell type, batch) so matched controls are
one lookup away. Shards are immutable once written; writes land in a temp
file and are renamed into place.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConditionLookupError, CorruptShardError, IngestionError
from .sparse import SparseBlock

MAGIC = b"VCSB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIQI")  # magic, version, rows, cols, nnz, crc32
assert _HEADER.size == 32

ConditionKey = tuple[int, int, int]  # (cell_type, perturbation, batch)
ControlKey = tuple[int, int]  # (cell_type, batch)


def _payload(block: SparseBlock) -> tuple[bytes, int]:
    raw = (block.indptr.astype("<u8").tobytes()
           + block.indices.astype("<u4").tobytes()
           + block.values.astype("<f4").tobytes())
    return raw, zlib.crc32(raw)


def write_block(path, block: SparseBlock) -> int:
    """Write one shard file; returns the payload checksum."""
    raw, crc = _payload(block)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, block.rows, block.cols, block.nnz, crc)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(raw)
    tmp.replace(path)
    return crc


def read_block(path, offset: int = 0, expect_crc: int | None = None) -> SparseBlock:
    """Read and checksum-verify one shard block."""
    try:
        with open(path, "rb") as f:
            f.seek(offset)
            head = f.read(_HEADER.size)
            if len(head) < _HEADER.size:
                raise CorruptShardError(f"{path}: truncated header")
            magic, version, rows, cols, nnz, crc = _HEADER.unpack(head)
            if magic != MAGIC:
                raise CorruptShardError(f"{path}: bad magic {magic!r}")
            if version != FORMAT_VERSION:
                raise CorruptShardError(f"{path}: unsupported version {version}")
            nbytes = 8 * (rows + 1) + 4 * nnz + 4 * nnz
            raw = f.read(nbytes)
    except OSError as exc:
        raise CorruptShardError(f"{path}: unreadable ({exc})") from exc
    if len(raw) != nbytes:
        raise CorruptShardError(f"{path}: truncated payload")
    if zlib.crc32(raw) != crc:
        raise CorruptShardError(f"{path}: checksum mismatch")
    if expect_crc is not None and crc != expect_crc:
        raise CorruptShardError(f"{path}: checksum differs from manifest")
    off = 8 * (rows + 1)
    indptr = np.frombuffer(raw, dtype="<u8", count=rows + 1)
    indices = np.frombuffer(raw, dtype="<u4", count=nnz, offset=off)
    values = np.frombuffer(raw, dtype="<f4", count=nnz, offset=off + 4 * nnz)
    return SparseBlock(rows=rows, cols=cols, indptr=indptr.copy(),
                       indices=indices.copy(), values=values.copy())


@dataclass
class ShardEntry:
    path: str
    offset: int
    cells: int
    checksum: int


@dataclass
class ShardManifest:
    """Index over all shard files of one dataset directory.

    Label lists double as id tables: a label's position is its dense id.
    """

    genes: list[str]
    celltypes: list[str]
    perturbations: list[str]
    batches: list[str]
    conditions: dict[ConditionKey, ShardEntry] = field(default_factory=dict)
    controls: dict[ControlKey, ShardEntry] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        for name, labels in (("genes", self.genes), ("celltypes", self.celltypes),
                             ("perturbations", self.perturbations), ("batches", self.batches)):
            if len(set(labels)) != len(labels):
                raise IngestionError(f"duplicate {name} labels collide on ids")

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    def to_json(self) -> str:
        doc = {
            "format_version": self.version,
            "genes": self.genes,
            "celltypes": self.celltypes,
            "perturbations": self.perturbations,
            "batches": self.batches,
            "conditions": [
                {"cell_type": c, "perturbation": p, "batch": b,
                 "path": e.path, "offset": e.offset, "cells": e.cells, "checksum": e.checksum}
                for (c, p, b), e in sorted(self.conditions.items())
            ],
            "controls": [
                {"cell_type": c, "batch": b,
                 "path": e.path, "offset": e.offset, "cells": e.cells, "checksum": e.checksum}
                for (c, b), e in sorted(self.controls.items())
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ShardManifest":
        doc = json.loads(text)
        manifest = cls(genes=doc["genes"], celltypes=doc["celltypes"],
                       perturbations=doc["perturbations"], batches=doc["batches"],
                       version=doc["format_version"])
        for row in doc["conditions"]:
            key = (row["cell_type"], row["perturbation"], row["batch"])
            if key in manifest.conditions:
                raise IngestionError(f"duplicate condition entry {key}")
            manifest.conditions[key] = ShardEntry(row["path"], row["offset"],
                                                  row["cells"], row["checksum"])
        for row in doc["controls"]:
            key = (row["cell_type"], row["batch"])
            if key in manifest.controls:
                raise IngestionError(f"duplicate control entry {key}")
            manifest.controls[key] = ShardEntry(row["path"], row["offset"],
                                                row["cells"], row["checksum"])
        return manifest


@dataclass
class Dataset:
    """In-memory condition-grouped dataset, the unit write_shards consumes."""

    genes: list[str]
    celltypes: list[str]
    perturbations: list[str]
    batches: list[str]
    pert_groups: dict[ConditionKey, SparseBlock]
    control_groups: dict[ControlKey, SparseBlock]


def write_shards(dataset: Dataset, out_dir) -> ShardManifest:
    """Lay a dataset out as one shard file per condition bucket plus manifest."""
    out_dir = Path(out_dir)
    (out_dir / "shards").mkdir(parents=True, exist_ok=True)
    manifest = ShardManifest(genes=dataset.genes, celltypes=dataset.celltypes,
                             perturbations=dataset.perturbations, batches=dataset.batches)
    for (c, p, b), block in sorted(dataset.pert_groups.items()):
        rel = f"shards/pert_c{c}_p{p}_b{b}.vcsb"
        crc = write_block(out_dir / rel, block)
        manifest.conditions[(c, p, b)] = ShardEntry(rel, 0, block.rows, crc)
    for (c, b), block in sorted(dataset.control_groups.items()):
        rel = f"shards/ctrl_c{c}_b{b}.vcsb"
        crc = write_block(out_dir / rel, block)
        manifest.controls[(c, b)] = ShardEntry(rel, 0, block.rows, crc)
    (out_dir / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_manifest(dataset_dir) -> ShardManifest:
    """Load and validate a manifest; all referenced shards must exist with
    headers matching the recorded checksums."""
    dataset_dir = Path(dataset_dir)
    try:
        text = (dataset_dir / "manifest.json").read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read manifest in {dataset_dir}: {exc}") from exc
    try:
        manifest = ShardManifest.from_json(text)
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"malformed manifest in {dataset_dir}: {exc}") from exc
    for entry in list(manifest.conditions.values()) + list(manifest.controls.values()):
        path = dataset_dir / entry.path
        if not path.exists():
            raise IngestionError(f"manifest references missing shard {entry.path}")
        with open(path, "rb") as f:
            f.seek(entry.offset)
            head = f.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise CorruptShardError(f"{entry.path}: truncated header")
        magic, _, _, _, _, crc = _HEADER.unpack(head)
        if magic != MAGIC or crc != entry.checksum:
            raise CorruptShardError(f"{entry.path}: header does not match manifest")
    return manifest


def read_group(manifest: ShardManifest, dataset_dir, condition: ConditionKey) -> SparseBlock:
    entry = manifest.conditions.get(tuple(condition))
    if entry is None:
        raise ConditionLookupError(f"condition {condition} not in manifest")
    return read_block(Path(dataset_dir) / entry.path, entry.offset, entry.checksum)


def read_control(manifest: ShardManifest, dataset_dir, key: ControlKey) -> SparseBlock:
    entry = manifest.controls.get(tuple(key))
    if entry is None:
        raise ConditionLookupError(f"control group {key} not in manifest")
    return read_block(Path(dataset_dir) / entry.path, entry.offset, entry.checksum)
