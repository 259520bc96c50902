"""Adaptive-moment optimization and the training loop."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import ndmath as nd
from . import setenc, transport
from .checkpoint import save_arrays
from .config import RunConfig
from .datastore.sampler import GroupStore, sample_batch
from .errors import NumericError
from .model import PerturbationModel, training_loss
from .ndmath import ParamSet


class Adam:
    """Adaptive-moment estimation over a ParamSet's gradient dict."""

    def __init__(self, params: ParamSet, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        """Update every parameter named in ``grads``; others stay frozen."""
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            t = self.params[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass
class RunRecord:
    """Append-only trace of one training run."""

    config: dict
    epochs: list[dict] = field(default_factory=list)
    checkpoint: str = ""

    def append_epoch(self, losses: dict[str, float], seconds: float) -> None:
        self.epochs.append({**losses, "seconds": seconds})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(
            {"config": self.config, "epochs": self.epochs, "checkpoint": self.checkpoint},
            indent=2, sort_keys=True))


def _gene_stats(store: GroupStore, conditions) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene mean and std over training cells (perturbed plus controls)."""
    total = np.zeros(store.n_genes)
    total_sq = np.zeros(store.n_genes)
    count = 0
    seen_ctrl = set()
    for key in conditions:
        block = store.perturbed(key)
        total += block.sum(axis=0)
        total_sq += (block ** 2).sum(axis=0)
        count += block.shape[0]
        ctrl_key = (key[0], key[2])
        if ctrl_key not in seen_ctrl and ctrl_key in store.manifest.controls:
            seen_ctrl.add(ctrl_key)
            ctrl = store.control(*ctrl_key)
            total += ctrl.sum(axis=0)
            total_sq += (ctrl ** 2).sum(axis=0)
            count += ctrl.shape[0]
    mean = total / max(count, 1)
    var = np.maximum(total_sq / max(count, 1) - mean ** 2, 0.0)
    return mean, np.maximum(np.sqrt(var), 1e-3)


def seed_standardization(params, store: GroupStore, conditions) -> None:
    """Point the model's boundary standardization at the data statistics so
    early training refines structure instead of chasing offsets."""
    mean, std = _gene_stats(store, conditions)
    params["enc.input_loc"].data = mean.copy()
    params["enc.input_inv_scale"].data = 1.0 / std
    params["dec.output_loc"].data = mean.copy()
    params["dec.output_scale"].data = std.copy()


def build_model(cfg: RunConfig, store: GroupStore) -> PerturbationModel:
    enc_cfg = setenc.EncoderConfig(
        genes=store.n_genes,
        gene_tokens=cfg.gene_tokens,
        cell_width=cfg.cell_width,
        phi_width=cfg.phi_width,
        summary_width=cfg.summary_width,
        latent_width=cfg.latent_width,
        blocks=cfg.encoder_blocks,
        n_heads=cfg.n_heads,
        decoder_hidden=cfg.decoder_hidden,
        mmd_weight=cfg.mmd_weight,
        mmd_bandwidths=cfg.mmd_bandwidths,
    )
    tr_cfg = transport.TransportConfig(
        n_celltypes=store.n_celltypes,
        n_perturbations=store.n_perturbations,
        n_batches=store.n_batches,
        latent_width=cfg.latent_width,
        cond_width=cfg.cond_width,
        blocks=cfg.backbone_blocks,
        n_heads=cfg.n_heads,
        time_features=cfg.time_features,
    )
    return PerturbationModel.build(enc_cfg, tr_cfg, cfg.seed)


def train_run(cfg: RunConfig, store: GroupStore, out_dir,
              model: PerturbationModel | None = None) -> RunRecord:
    """Train per the run config and write checkpoint + record into ``out_dir``.

    Deterministic: one seeded generator drives batch sampling, path times,
    and prior draws in a fixed order. BLAS pools are capped to one thread;
    the matrices here are too small for fan-out to pay off. A pre-built
    ``model`` skips the default construction (warm starts, tests).
    """
    with threadpool_limits(limits=1):
        return _train_run(cfg, store, out_dir, model)


def _train_run(cfg: RunConfig, store: GroupStore, out_dir,
               model: PerturbationModel | None = None) -> RunRecord:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_conditions = store.training_conditions(cfg.holdout)
    if model is None:
        model = build_model(cfg, store)
        seed_standardization(model.params, store, train_conditions)

    variant = transport.JiTVariant.parse(cfg.variant)
    prior = transport.PriorMode(kind=cfg.prior, mix=cfg.prior_mix, mask_rate=cfg.prior_mask_rate)
    opt = Adam(model.params, lr=cfg.learning_rate, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    rng = np.random.default_rng(cfg.seed)

    record = RunRecord(config=cfg.to_dict())
    stage_boundary = cfg.epochs  # joint mode: flow active throughout
    if cfg.training_mode == "staged":
        stage_boundary = cfg.epochs // 2

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        sums = {"mse": 0.0, "mmd": 0.0, "flow": 0.0, "total": 0.0}
        transport_only = False
        if cfg.training_mode == "staged":
            # stage 1 fits the autoencoder; stage 2 fits the transport stack
            # on frozen latents (updating the encoder under a flow-only loss
            # would collapse the latent space)
            ae_weight = 1.0 if epoch < stage_boundary else 0.0
            flow_weight = 0.0 if epoch < stage_boundary else cfg.flow_weight
            transport_only = epoch >= stage_boundary
        else:
            ae_weight = 1.0
            flow_weight = cfg.flow_weight
        for _ in range(cfg.steps_per_epoch):
            examples = sample_batch(store, cfg.batch_size, cfg.set_size,
                                    cfg.sampling, rng, conditions=train_conditions)
            x0 = np.stack([ex.x0 for ex in examples])
            x1 = np.stack([ex.x1 for ex in examples])
            cond = transport.ConditionBatch(
                celltype=np.array([ex.celltype for ex in examples]),
                perturbation=np.array([ex.perturbation for ex in examples]),
                batch=np.array([ex.batch for ex in examples]),
            )
            t = float(rng.uniform(0.0, 1.0))
            draw = transport.start_noise(prior, x0.shape[:2] + (cfg.latent_width,), rng)

            tape = nd.Tape()
            model.params.bind(tape)
            terms = training_loss(model, x0, x1, cond, variant=variant, prior=prior,
                                  pooling=cfg.pooling, t=t, draw=draw,
                                  flow_weight=flow_weight, ae_weight=ae_weight)
            values = terms.values()
            for name, value in values.items():
                if not np.isfinite(value):
                    model.params.bind(None)
                    raise NumericError(f"loss term {name!r} is not finite at epoch {epoch}")
                sums[name] += value
            nd.backward(tape, 1.0, out=terms.total)
            grads = model.params.grads()
            model.params.bind(None)
            if transport_only:
                grads = {name: g for name, g in grads.items()
                         if not name.startswith(("enc.", "dec."))}
            opt.step(grads)
        seconds = time.perf_counter() - started
        record.append_epoch({k: v / cfg.steps_per_epoch for k, v in sums.items()}, seconds)

    ckpt_path = out_dir / "checkpoint.bin"
    save_arrays(ckpt_path, model.params.state(), meta=cfg.to_dict())
    record.checkpoint = str(ckpt_path)
    record.save(out_dir / "record.json")
    return record
