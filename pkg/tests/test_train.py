import json

import numpy as np
import pytest

from cellshift.checkpoint import load_arrays
from cellshift.config import RunConfig
from cellshift.datastore import Dataset, GroupStore, SparseBlock, load_manifest, write_shards
from cellshift.errors import NumericError
from cellshift.train import Adam, build_model, train_run
from cellshift.ndmath import ParamSet


def identity_store(tmp_path, genes=12, cells=32, seed=0):
    """A dataset whose perturbed cells equal its control cells (X1 == X0)."""
    rng = np.random.default_rng(seed)
    cells_arr = (rng.uniform(0.2, 1.0, size=(cells, genes))).astype(np.float32)
    block = SparseBlock.from_dense(cells_arr)
    same = SparseBlock.from_dense(cells_arr.copy())
    ds = Dataset(genes=[f"g{i}" for i in range(genes)], celltypes=["ct0"],
                 perturbations=["p0"], batches=["b0"],
                 pert_groups={(0, 0, 0): block}, control_groups={(0, 0): same})
    write_shards(ds, tmp_path)
    return GroupStore(load_manifest(tmp_path), tmp_path)


def tiny_cfg(**kw):
    base = dict(epochs=4, steps_per_epoch=4, batch_size=4, set_size=8,
                gene_tokens=3, cell_width=8, phi_width=8, summary_width=8,
                latent_width=8, encoder_blocks=1, backbone_blocks=1,
                decoder_hidden=12, cond_width=4, seed=0)
    base.update(kw)
    return RunConfig(**base)


class TestAdam:
    def test_minimizes_quadratic(self):
        params = ParamSet()
        params.add("x", np.array([5.0, -3.0]))
        opt = Adam(params, lr=0.1)
        for _ in range(300):
            opt.step({"x": 2.0 * params["x"].data})
        assert np.max(np.abs(params["x"].data)) < 1e-3

    def test_step_sizes_bounded_by_lr(self):
        params = ParamSet()
        params.add("x", np.array([1.0]))
        opt = Adam(params, lr=0.01)
        before = params["x"].data.copy()
        opt.step({"x": np.array([1e6])})
        assert abs(params["x"].data[0] - before[0]) <= 0.011


class TestTrainRun:
    def test_identity_task_loss_decreases(self, tmp_path):
        store = identity_store(tmp_path / "data")
        cfg = tiny_cfg(epochs=15, steps_per_epoch=8)
        record = train_run(cfg, store, tmp_path / "run")
        totals = [e["total"] for e in record.epochs]
        smoothed = [float(np.mean(totals[i:i + 5])) for i in range(0, 15, 5)]
        assert smoothed[1] < smoothed[0]
        assert smoothed[2] < smoothed[1]

    def test_flow_weight_zero_is_ae_only(self, tmp_path):
        """With the flow term weighted to zero, the JiT variant cannot
        influence updates: checkpoints across variants are bit-identical."""
        store = identity_store(tmp_path / "data")
        ck = {}
        for variant in ("xx", "vv"):
            cfg = tiny_cfg(flow_weight=0.0, variant=variant)
            out = tmp_path / f"run_{variant}"
            record = train_run(cfg, store, out)
            assert all(e["flow"] >= 0 for e in record.epochs)  # still reported
            ck[variant], _ = load_arrays(out / "checkpoint.bin")
        assert set(ck["xx"]) == set(ck["vv"])
        for name in ck["xx"]:
            assert np.array_equal(ck["xx"][name], ck["vv"][name]), name

    def test_staged_mode_runs_and_checkpoint_loads(self, tmp_path):
        store = identity_store(tmp_path / "data")
        cfg = tiny_cfg(training_mode="staged", epochs=4)
        record = train_run(cfg, store, tmp_path / "run")
        assert len(record.epochs) == 4
        state, meta = load_arrays(tmp_path / "run" / "checkpoint.bin")
        model = build_model(cfg, store)
        model.params.load_state(state)  # shapes agree
        assert meta["training_mode"] == "staged"

    def test_nan_loss_aborts_with_term_name(self, tmp_path):
        store = identity_store(tmp_path / "data")
        cfg = tiny_cfg()
        model = build_model(cfg, store)
        model.params["dec.w1"].data[0, 0] = np.nan
        with pytest.raises(NumericError, match="mse"):
            train_run(cfg, store, tmp_path / "run", model=model)

    def test_record_json_written(self, tmp_path):
        store = identity_store(tmp_path / "data")
        cfg = tiny_cfg(epochs=2)
        train_run(cfg, store, tmp_path / "run")
        doc = json.loads((tmp_path / "run" / "record.json").read_text())
        assert len(doc["epochs"]) == 2
        assert doc["config"]["epochs"] == 2
        assert doc["checkpoint"].endswith("checkpoint.bin")

    def test_same_seed_identical_checkpoints(self, tmp_path):
        store = identity_store(tmp_path / "data")
        cfg = tiny_cfg(epochs=3)
        train_run(cfg, store, tmp_path / "run1")
        train_run(cfg, store, tmp_path / "run2")
        a = (tmp_path / "run1" / "checkpoint.bin").read_bytes()
        b = (tmp_path / "run2" / "checkpoint.bin").read_bytes()
        assert a == b


def test_identity_task_generation_accuracy(tmp_path):
    """Trained stage-wise on example pairs with X1 = X0, generation
    reproduces the control cells to tight per-entry error."""
    from cellshift import ndmath as nd
    from cellshift import transport
    from cellshift.model import training_loss
    from cellshift.train import seed_standardization

    store = identity_store(tmp_path / "data", genes=12, cells=8)
    cfg = tiny_cfg(latent_width=16, cell_width=16, decoder_hidden=32,
                   backbone_blocks=2, learning_rate=3e-3)
    model = build_model(cfg, store)
    seed_standardization(model.params, store, store.condition_keys())
    opt = Adam(model.params, lr=cfg.learning_rate)
    rng = np.random.default_rng(1)
    cells = store.control(0, 0)
    x0 = cells[None]
    variant = transport.JiTVariant.parse("xx")
    prior = transport.PriorMode("control")
    cond = transport.ConditionBatch(np.zeros(1, int), np.zeros(1, int), np.zeros(1, int))

    def phase(steps, lr, ae_weight, flow_weight, trainable):
        opt.lr = lr
        for _ in range(steps):
            t = float(rng.uniform())
            draw = transport.start_noise(prior, x0.shape[:2] + (cfg.latent_width,), rng)
            tape = nd.Tape()
            model.params.bind(tape)
            terms = training_loss(model, x0, x0, cond, variant=variant, prior=prior,
                                  pooling="seed", t=t, draw=draw,
                                  ae_weight=ae_weight, flow_weight=flow_weight)
            nd.backward(tape, 1.0, out=terms.total)
            grads = {name: g for name, g in model.params.grads().items()
                     if name.startswith(trainable)}
            model.params.bind(None)
            opt.step(grads)
        return terms

    phase(1200, 3e-3, 1.0, 0.0, ("enc.", "dec."))  # autoencoder stage
    phase(400, 3e-4, 1.0, 0.0, ("enc.", "dec."))
    # transport stage on frozen latents
    phase(2000, 3e-3, 0.0, 1.0, ("cond.", "time.", "bb.", "head."))
    terms = phase(800, 1e-3, 0.0, 1.0, ("cond.", "time.", "bb.", "head."))
    assert terms.flow.item() < 2e-3

    pred = model.generate(x0, cond, variant, prior, "seed", 1,
                          np.random.default_rng(0))[0]
    assert np.max(np.abs(pred - cells)) < 0.05
