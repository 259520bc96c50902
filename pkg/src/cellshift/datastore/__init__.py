"""Condition-sharded sparse storage, preprocessing, sampling, synthesis."""

from .preprocess import gene_variances, preprocess, select_hvg, subset_genes
from .sampler import GroupStore, TrainExample, sample_batch
from .shards import (
    Dataset,
    ShardEntry,
    ShardManifest,
    load_manifest,
    read_block,
    read_control,
    read_group,
    write_block,
    write_shards,
)
from .sparse import SparseBlock
from .synth import PlantedEffect, SynthConfig, load_truth_table, synth_generate, truth_table_csv

__all__ = [
    "Dataset",
    "GroupStore",
    "PlantedEffect",
    "ShardEntry",
    "ShardManifest",
    "SparseBlock",
    "SynthConfig",
    "TrainExample",
    "gene_variances",
    "load_manifest",
    "load_truth_table",
    "preprocess",
    "read_block",
    "read_control",
    "read_group",
    "sample_batch",
    "select_hvg",
    "subset_genes",
    "synth_generate",
    "truth_table_csv",
    "write_block",
    "write_shards",
]
