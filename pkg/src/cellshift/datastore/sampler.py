"""Batch-aware sampling of matched (control, perturbed) set pairs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, SamplingError
from .shards import ConditionKey, ShardManifest, read_control, read_group

STRATEGIES = ("proportional", "uniform")


@dataclass(frozen=True)
class TrainExample:
    """One matched pair of cell sets plus its condition ids. ``x0`` always
    comes from the control store with the same cell type and batch as ``x1``."""

    x0: np.ndarray
    x1: np.ndarray
    celltype: int
    perturbation: int
    batch: int


class GroupStore:
    """Dense, memoized view over a sharded dataset directory."""

    def __init__(self, manifest: ShardManifest, dataset_dir):
        self.manifest = manifest
        self.dataset_dir = Path(dataset_dir)
        self._pert_cache: dict[ConditionKey, np.ndarray] = {}
        self._ctrl_cache: dict[tuple[int, int], np.ndarray] = {}

    @property
    def n_genes(self) -> int:
        return self.manifest.n_genes

    @property
    def n_celltypes(self) -> int:
        return len(self.manifest.celltypes)

    @property
    def n_perturbations(self) -> int:
        return len(self.manifest.perturbations)

    @property
    def n_batches(self) -> int:
        return len(self.manifest.batches)

    def condition_keys(self) -> list[ConditionKey]:
        return sorted(self.manifest.conditions)

    def training_conditions(self, holdout: tuple[tuple[int, int], ...] = ()) -> list[ConditionKey]:
        """All condition keys except those whose (cell type, perturbation)
        pair is held out."""
        held = set(holdout)
        return [k for k in self.condition_keys() if (k[0], k[1]) not in held]

    def perturbed(self, key: ConditionKey) -> np.ndarray:
        if key not in self._pert_cache:
            self._pert_cache[key] = read_group(self.manifest, self.dataset_dir, key).to_dense()
        return self._pert_cache[key]

    def control(self, celltype: int, batch: int) -> np.ndarray:
        key = (celltype, batch)
        if key not in self._ctrl_cache:
            self._ctrl_cache[key] = read_control(self.manifest, self.dataset_dir, key).to_dense()
        return self._ctrl_cache[key]


def _draw_rows(n_avail: int, n_want: int, rng: np.random.Generator) -> np.ndarray:
    # groups smaller than the set size are upsampled with replacement
    replace = n_avail < n_want
    return rng.choice(n_avail, size=n_want, replace=replace)


def sample_batch(store: GroupStore, batch_size: int, set_size: int,
                 strategy: str, rng: np.random.Generator,
                 conditions: list[ConditionKey] | None = None) -> list[TrainExample]:
    """Draw ``batch_size`` matched set pairs.

    'proportional' picks conditions with probability proportional to group
    size (the default for imbalanced stores); 'uniform' gives every
    condition equal probability. Controls are matched on (cell type,
    batch). Deterministic given the generator state.
    """
    if strategy not in STRATEGIES:
        raise ArgumentError(f"unknown sampling strategy {strategy!r}")
    if conditions is None:
        conditions = store.condition_keys()
    if not conditions:
        raise SamplingError("no conditions available to sample")
    for c, p, b in conditions:
        if (c, b) not in store.manifest.controls:
            label = (store.manifest.celltypes[c], store.manifest.perturbations[p],
                     store.manifest.batches[b])
            raise SamplingError(f"condition {label} has no matched control group")

    sizes = np.array([store.manifest.conditions[k].cells for k in conditions], dtype=float)
    if strategy == "proportional":
        probs = sizes / sizes.sum()
    else:
        probs = np.full(len(conditions), 1.0 / len(conditions))
    picks = rng.choice(len(conditions), size=batch_size, p=probs)

    examples = []
    for pick in picks:
        c, p, b = conditions[pick]
        pert = store.perturbed((c, p, b))
        ctrl = store.control(c, b)
        x1 = pert[_draw_rows(pert.shape[0], set_size, rng)]
        x0 = ctrl[_draw_rows(ctrl.shape[0], set_size, rng)]
        examples.append(TrainExample(x0=x0, x1=x1, celltype=c, perturbation=p, batch=b))
    return examples
