import numpy as np
import pytest

from cellshift.datastore import (
    Dataset,
    SparseBlock,
    load_manifest,
    preprocess,
    read_block,
    read_control,
    read_group,
    select_hvg,
    subset_genes,
    write_block,
    write_shards,
)
from cellshift.errors import (
    ArgumentError,
    ConditionLookupError,
    CorruptShardError,
    IngestionError,
)


def random_block(rng, rows=None, cols=None, density=0.4):
    rows = rows or int(rng.integers(1, 12))
    cols = cols or int(rng.integers(1, 20))
    dense = rng.random((rows, cols)) * (rng.random((rows, cols)) < density)
    return SparseBlock.from_dense(dense.astype(np.float32))


class TestSparseBlock:
    def test_dense_roundtrip(self):
        rng = np.random.default_rng(0)
        dense = (rng.random((5, 7)) * (rng.random((5, 7)) < 0.5)).astype(np.float32)
        block = SparseBlock.from_dense(dense)
        assert np.array_equal(block.to_dense(np.float32), dense)

    def test_invariant_violations(self):
        with pytest.raises(IngestionError):
            SparseBlock(rows=2, cols=3, indptr=np.array([0, 1]), indices=np.array([0]),
                        values=np.array([1.0]))
        with pytest.raises(IngestionError):  # decreasing offsets
            SparseBlock(rows=2, cols=3, indptr=np.array([0, 2, 1]),
                        indices=np.array([0, 1]), values=np.array([1.0, 1.0]))
        with pytest.raises(IngestionError):  # column out of range
            SparseBlock(rows=1, cols=2, indptr=np.array([0, 1]), indices=np.array([2]),
                        values=np.array([1.0]))
        with pytest.raises(IngestionError):  # non-increasing columns in a row
            SparseBlock(rows=1, cols=4, indptr=np.array([0, 2]),
                        indices=np.array([2, 1]), values=np.array([1.0, 1.0]))
        with pytest.raises(IngestionError):  # non-finite value
            SparseBlock(rows=1, cols=2, indptr=np.array([0, 1]), indices=np.array([0]),
                        values=np.array([np.inf]))


class TestShardIO:
    def test_roundtrip_fuzz_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        for i in range(1000):
            block = random_block(rng)
            path = tmp_path / "block.vcsb"
            write_block(path, block)
            back = read_block(path)
            assert back.rows == block.rows and back.cols == block.cols
            assert np.array_equal(back.indptr, block.indptr)
            assert np.array_equal(back.indices, block.indices)
            assert back.values.tobytes() == block.values.tobytes()

    def test_corruption_detected(self, tmp_path):
        rng = np.random.default_rng(2)
        block = random_block(rng, rows=6, cols=9)
        path = tmp_path / "block.vcsb"
        write_block(path, block)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptShardError):
            read_block(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.vcsb"
        path.write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(CorruptShardError):
            read_block(path)

    def test_million_nonzero_roundtrip_benchmark(self, tmp_path):
        """Non-gating: reports the large-block roundtrip time."""
        import time

        rng = np.random.default_rng(3)
        rows, cols, nnz_per_row = 2000, 2000, 500
        indptr = np.arange(rows + 1, dtype=np.uint64) * nnz_per_row
        indices = np.tile(np.arange(0, cols, cols // nnz_per_row, dtype=np.uint32)[:nnz_per_row],
                          rows)
        values = rng.random(rows * nnz_per_row).astype(np.float32)
        block = SparseBlock(rows=rows, cols=cols, indptr=indptr, indices=indices,
                            values=values)
        path = tmp_path / "big.vcsb"
        started = time.perf_counter()
        write_block(path, block)
        back = read_block(path)
        elapsed = time.perf_counter() - started
        assert back.values.tobytes() == block.values.tobytes()
        print(f"\n1e6-nonzero shard roundtrip: {elapsed * 1000:.0f} ms (non-gating)")


def small_dataset(rng, celltypes=2, perts=2, batches=1, cells=5, genes=6):
    pert_groups = {}
    control_groups = {}
    for c in range(celltypes):
        for b in range(batches):
            control_groups[(c, b)] = random_block(rng, rows=cells, cols=genes, density=0.8)
            for p in range(perts):
                pert_groups[(c, p, b)] = random_block(rng, rows=cells, cols=genes, density=0.8)
    return Dataset(
        genes=[f"g{i}" for i in range(genes)],
        celltypes=[f"ct{i}" for i in range(celltypes)],
        perturbations=[f"p{i}" for i in range(perts)],
        batches=[f"b{i}" for i in range(batches)],
        pert_groups=pert_groups,
        control_groups=control_groups,
    )


class TestManifest:
    def test_write_read_group_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = small_dataset(rng)
        manifest = write_shards(ds, tmp_path)
        loaded = load_manifest(tmp_path)
        assert loaded.to_json() == manifest.to_json()
        block = read_group(loaded, tmp_path, (1, 0, 0))
        orig = ds.pert_groups[(1, 0, 0)]
        assert np.array_equal(block.to_dense(), orig.to_dense())
        ctrl = read_control(loaded, tmp_path, (0, 0))
        assert np.array_equal(ctrl.to_dense(), ds.control_groups[(0, 0)].to_dense())

    def test_unknown_condition(self, tmp_path):
        ds = small_dataset(np.random.default_rng(4))
        manifest = write_shards(ds, tmp_path)
        with pytest.raises(ConditionLookupError):
            read_group(manifest, tmp_path, (5, 5, 5))

    def test_dangling_reference_rejected(self, tmp_path):
        ds = small_dataset(np.random.default_rng(5))
        write_shards(ds, tmp_path)
        (tmp_path / "shards" / "pert_c0_p0_b0.vcsb").unlink()
        with pytest.raises(IngestionError):
            load_manifest(tmp_path)

    def test_label_collision_rejected(self, tmp_path):
        ds = small_dataset(np.random.default_rng(6))
        ds.genes[1] = ds.genes[0]
        with pytest.raises(IngestionError):
            write_shards(ds, tmp_path)

    def test_checksum_mismatch_on_load(self, tmp_path):
        ds = small_dataset(np.random.default_rng(7))
        write_shards(ds, tmp_path)
        path = tmp_path / "shards" / "ctrl_c0_b0.vcsb"
        raw = bytearray(path.read_bytes())
        raw[28] ^= 0x01  # flip a checksum byte in the header
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptShardError):
            load_manifest(tmp_path)


class TestPreprocess:
    def test_all_zero_cell_passthrough(self):
        block = SparseBlock(rows=2, cols=3, indptr=np.array([0, 0, 1]),
                            indices=np.array([1]), values=np.array([4.0]))
        out = preprocess(block, target_sum=100.0)
        dense = out.to_dense()
        assert np.array_equal(dense[0], np.zeros(3))

    def test_single_gene_cell_closed_form(self):
        block = SparseBlock(rows=1, cols=2, indptr=np.array([0, 1]),
                            indices=np.array([0]), values=np.array([7.0]))
        out = preprocess(block, target_sum=1e4)
        expect = 10.0 * np.log1p(1e4)
        assert abs(out.to_dense()[0, 0] - expect) < 1e-4  # float32 storage

    def test_library_size_invariance(self):
        rng = np.random.default_rng(8)
        dense = (rng.random((4, 6)) * (rng.random((4, 6)) < 0.7)).astype(np.float64)
        a = preprocess(SparseBlock.from_dense(dense)).to_dense(np.float64)
        b = preprocess(SparseBlock.from_dense(3.0 * dense)).to_dense(np.float64)
        denom = np.maximum(np.abs(a), 1e-12)
        assert np.max(np.abs(a - b) / denom) < 1e-6

    def test_negative_counts_rejected(self):
        block = SparseBlock(rows=1, cols=2, indptr=np.array([0, 1]),
                            indices=np.array([0]), values=np.array([3.0]))
        block.values = np.array([-1.0], dtype=np.float32)
        with pytest.raises(IngestionError):
            preprocess(block)


class TestHvg:
    def test_keep_all_identity(self):
        rng = np.random.default_rng(9)
        block = random_block(rng, rows=8, cols=5, density=0.9)
        assert np.array_equal(select_hvg([block], 5), np.arange(5))

    def test_constant_gene_never_beats_varying(self):
        dense = np.zeros((4, 3))
        dense[:, 0] = 2.0  # constant (nonzero) gene: zero variance
        dense[:, 1] = [0.0, 1.0, 2.0, 3.0]
        dense[:, 2] = [5.0, 5.0, 5.0, 4.0]
        idx = select_hvg([SparseBlock.from_dense(dense)], 2)
        assert 0 not in idx

    def test_hand_variances_top2(self):
        dense = np.array([
            [1.0, 0.0, 5.0, 2.0, 1.0],
            [3.0, 0.0, 5.0, 2.0, 2.0],
            [5.0, 0.0, 5.0, 2.0, 3.0],
        ])
        idx = select_hvg([SparseBlock.from_dense(dense)], 2)
        assert set(idx.tolist()) == {0, 4}

    def test_tie_breaks_to_lower_index(self):
        dense = np.array([[1.0, 1.0], [2.0, 2.0]])
        idx = select_hvg([SparseBlock.from_dense(dense)], 1)
        assert idx.tolist() == [0]

    def test_too_many_requested(self):
        block = SparseBlock.from_dense(np.ones((2, 3)))
        with pytest.raises(ArgumentError):
            select_hvg([block], 4)

    def test_subset_genes(self):
        rng = np.random.default_rng(10)
        block = random_block(rng, rows=6, cols=8, density=0.6)
        idx = np.array([1, 3, 4, 7])
        sub = subset_genes(block, idx)
        assert np.array_equal(sub.to_dense(), block.to_dense()[:, idx])
