"""Conditional latent endpoint transport.

Discrete (cell type, perturbation, batch) conditions are embedded, pooled
into a single condition token, and injected into a stack of attention
blocks that evolve the latent cell population. Prediction heads expose the
endpoint/displacement parameterization family; the start state of the
path is configurable (control-anchored, Gaussian-mixed, masked).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from . import setenc
from .errors import ArgumentError, ConditionLookupError, ConfigError, NumericError
from .ndmath import ParamSet, Tensor

POOLING_MODES = ("mean", "token", "seed")


@dataclass(frozen=True)
class JiTVariant:
    """Which head the network trains (endpoint vs displacement) and which
    space the loss is computed in."""

    predict: str  # "x" (endpoint) or "v" (displacement)
    loss_space: str  # "x" or "v"

    def __post_init__(self):
        if self.predict not in ("x", "v") or self.loss_space not in ("x", "v"):
            raise ConfigError(f"bad JiT variant: {self.predict}-pred/{self.loss_space}-loss")

    @classmethod
    def parse(cls, code: str) -> "JiTVariant":
        """Two-letter code: prediction target then loss space, e.g. 'xv'."""
        if len(code) != 2:
            raise ConfigError(f"variant code must be two letters, got {code!r}")
        return cls(predict=code[0], loss_space=code[1])

    @property
    def code(self) -> str:
        return self.predict + self.loss_space


VARIANT_CODES = ("xx", "xv", "vx", "vv")


@dataclass(frozen=True)
class PriorMode:
    """Construction of the transport start state.

    kind 'control' uses the control latents directly; 'gaussmix' draws unit
    Gaussian noise plus ``mix`` times the control latents; the 'mask*'
    kinds additionally zero each entry independently with probability
    ``mask_rate``.
    """

    kind: str = "control"
    mix: float = 0.5
    mask_rate: float = 0.15

    def __post_init__(self):
        if self.kind not in ("control", "gaussmix", "maskctrl", "maskmix"):
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if self.mix < 0:
            raise ConfigError("mix coefficient must be >= 0")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigError("mask_rate must be in [0, 1]")

    @property
    def gaussian(self) -> bool:
        return self.kind in ("gaussmix", "maskmix")

    @property
    def masked(self) -> bool:
        return self.kind in ("maskctrl", "maskmix")


@dataclass(frozen=True)
class TransportConfig:
    n_celltypes: int
    n_perturbations: int
    n_batches: int
    latent_width: int = 16
    cond_width: int = 16
    blocks: int = 4
    n_heads: int = 1
    time_features: int = 16
    time_max_period: float = 1e4
    norm_eps: float = 1e-8

    def __post_init__(self):
        for name in ("n_celltypes", "n_perturbations", "n_batches",
                     "latent_width", "cond_width", "blocks", "time_features"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.latent_width % self.n_heads != 0:
            raise ConfigError("n_heads must divide latent_width")


@dataclass(frozen=True)
class ConditionBatch:
    """Per-example discrete condition ids."""

    celltype: np.ndarray
    perturbation: np.ndarray
    batch: np.ndarray

    def __post_init__(self):
        if not (len(self.celltype) == len(self.perturbation) == len(self.batch)):
            raise ArgumentError("condition id arrays must have equal length")

    def __len__(self) -> int:
        return len(self.celltype)


def add_transport_params(params: ParamSet, cfg: TransportConfig, rng: np.random.Generator) -> None:
    """Register condition/backbone/head weights under ``cond.* / time.* / bb.* / head.*``."""
    d, dc = cfg.latent_width, cfg.cond_width
    params.matrix("cond.embed_celltype", rng, cfg.n_celltypes, dc)
    params.matrix("cond.embed_pert", rng, cfg.n_perturbations, dc)
    params.matrix("cond.embed_batch", rng, cfg.n_batches, dc)
    params.matrix("cond.proj", rng, dc, d)
    params.vector("cond.seed_query", rng, d)
    params.matrix("cond.wq", rng, d, d)
    params.matrix("cond.wk", rng, d, d)
    params.matrix("cond.wv", rng, d, d)
    params.vector("cond.token_score", rng, d)
    feat = 2 * cfg.time_features
    params.matrix("time.w1", rng, feat, d)
    params.zeros("time.b1", (d,))
    params.matrix("time.w2", rng, d, d)
    params.zeros("time.b2", (d,))
    for layer in range(cfg.blocks):
        nd.add_block_params(params, f"bb.blk{layer}", d, rng)
    params.matrix("head.x_w", rng, d, d)
    params.zeros("head.x_b", (d,))
    params.matrix("head.v_w", rng, d, d)
    params.zeros("head.v_b", (d,))


def embed_conditions(params: ParamSet, cfg: TransportConfig, cond: ConditionBatch) -> Tensor:
    """Look up dense embeddings for the three condition ids: -> (B, 3, cond_width).

    One-hot times an embedding matrix is exactly row selection, so this is
    implemented as an indexed lookup.
    """
    for name, ids, hi in (("cell type", cond.celltype, cfg.n_celltypes),
                          ("perturbation", cond.perturbation, cfg.n_perturbations),
                          ("batch", cond.batch, cfg.n_batches)):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= hi):
            raise ConditionLookupError(
                f"{name} id out of range [0, {hi}): manifest and model disagree")
    b = len(cond)
    dc = cfg.cond_width
    rows = [
        nd.reshape(nd.take_rows(params["cond.embed_celltype"], cond.celltype), (b, 1, dc)),
        nd.reshape(nd.take_rows(params["cond.embed_pert"], cond.perturbation), (b, 1, dc)),
        nd.reshape(nd.take_rows(params["cond.embed_batch"], cond.batch), (b, 1, dc)),
    ]
    return nd.concat(rows, axis=1)


def seed_aggregate(params: ParamSet, cfg: TransportConfig, c: Tensor,
                   pooling: str = "seed") -> tuple[Tensor, Tensor]:
    """Pool the three projected condition tokens into one: -> (alpha, c_seed).

    alpha is (B, 1, 3) and always a probability vector; c_seed is
    (B, 1, latent_width). Pooling modes: 'mean' (uniform weights), 'token'
    (learned per-token scores), 'seed' (learned seed query attention).
    """
    if pooling not in POOLING_MODES:
        raise ConfigError(f"unknown pooling mode {pooling!r}")
    if c.shape[1] != 3:
        raise ArgumentError("expected exactly 3 condition tokens per example")
    b = c.shape[0]
    d = cfg.latent_width
    c_proj = nd.matmul(c, params["cond.proj"])  # (B, 3, d)
    if pooling == "mean":
        alpha = nd.broadcast_to(Tensor(np.full((1, 1, 3), 1.0 / 3.0)), (b, 1, 3))
    elif pooling == "token":
        scores = nd.mul(nd.matmul(c_proj, nd.reshape(params["cond.token_score"], (d, 1))),
                        1.0 / math.sqrt(d))
        alpha = nd.softmax(nd.swap_last2(scores))
    else:
        q = nd.matmul(nd.reshape(params["cond.seed_query"], (1, d)), params["cond.wq"])
        keys = nd.matmul(c_proj, params["cond.wk"])
        scores = nd.mul(nd.matmul(nd.broadcast_to(nd.reshape(q, (1, 1, d)), (b, 1, d)),
                                  nd.swap_last2(keys)),
                        1.0 / math.sqrt(d))
        alpha = nd.softmax(scores)
    values = nd.matmul(c_proj, params["cond.wv"])
    c_seed = nd.matmul(alpha, values)
    return alpha, c_seed


def condition_token(params: ParamSet, cfg: TransportConfig, cond: ConditionBatch,
                    pooling: str = "seed") -> Tensor:
    """Full condition pipeline: ids -> embeddings -> pooled token (B, 1, d)."""
    c = embed_conditions(params, cfg, cond)
    _, c_seed = seed_aggregate(params, cfg, c, pooling)
    return c_seed


def time_embedding(params: ParamSet, cfg: TransportConfig, t: float) -> Tensor:
    """Sinusoidal features of the path time pushed through a perceptron: -> (d,)."""
    k = cfg.time_features
    if k == 1:
        freqs = np.ones(1)
    else:
        freqs = cfg.time_max_period ** (np.arange(k) / (k - 1))
    feats = np.concatenate([np.sin(freqs * t), np.cos(freqs * t)])
    return nd.perceptron2(Tensor(feats.reshape(1, -1)), params["time.w1"], params["time.b1"],
                          params["time.w2"], params["time.b2"])


def inject_block(params: ParamSet, cfg: TransportConfig, layer: int,
                 h: Tensor, c_seed: Tensor, t_emb: Tensor) -> Tensor:
    """One conditioned backbone block over N cell tokens plus the condition token.

    The time embedding is added to cell tokens only; the condition token is
    concatenated, attended over, and dropped afterwards. Nothing depends on
    cell order.
    """
    b, n, d = h.shape
    cells = nd.add(h, nd.reshape(t_emb, (1, 1, d)))
    joint = nd.concat([cells, c_seed], axis=1)
    out = nd.prenorm_block(joint, nd.block_params(params, f"bb.blk{layer}"),
                           cfg.n_heads, cfg.norm_eps)
    return nd.slice_axis(out, 1, 0, n)


def interpolate(z0: Tensor, z1: Tensor, t: float) -> Tensor:
    """Linear surrogate path (1-t) z0 + t z1; exactly z0 / z1 at the endpoints."""
    if z0.shape != z1.shape:
        raise ArgumentError("endpoint shapes must match")
    if not 0.0 <= t <= 1.0:
        raise ArgumentError(f"path time t={t} outside [0, 1]")
    return nd.add(nd.mul(z0, 1.0 - t), nd.mul(z1, t))


@dataclass(frozen=True)
class StartDraw:
    """Frozen randomness for one start-state construction."""

    noise: np.ndarray | None = None
    keep: np.ndarray | None = None


def start_noise(mode: PriorMode, shape: tuple[int, ...], rng: np.random.Generator) -> StartDraw:
    """Draw the Gaussian noise / keep-mask a prior mode needs for ``shape``."""
    noise = rng.standard_normal(shape) if mode.gaussian else None
    keep = (rng.random(shape) >= mode.mask_rate).astype(float) if mode.masked else None
    return StartDraw(noise=noise, keep=keep)


def apply_start(z0: Tensor, mode: PriorMode, draw: StartDraw) -> Tensor:
    """Build the start state from control latents and a frozen draw."""
    if mode.kind == "control":
        return z0
    start = nd.add(Tensor(draw.noise), nd.mul(z0, mode.mix)) if mode.gaussian else z0
    if mode.masked:
        start = nd.mul(start, Tensor(draw.keep))
    return start


def sample_start(z0: Tensor, mode: PriorMode, rng: np.random.Generator) -> Tensor:
    """Sample the transport start state for the configured prior mode."""
    return apply_start(z0, mode, start_noise(mode, z0.shape, rng))


def backbone(params: ParamSet, cfg: TransportConfig, z: Tensor, t: float,
             cond: ConditionBatch, pooling: str = "seed") -> Tensor:
    """Conditional transport backbone: (B, N, d) -> (B, N, d), equivariant in cells."""
    c_seed = condition_token(params, cfg, cond, pooling)
    t_emb = time_embedding(params, cfg, t)
    h = z
    for layer in range(cfg.blocks):
        h = inject_block(params, cfg, layer, h, c_seed, t_emb)
    return h


def jit_predict(params: ParamSet, h_t: Tensor, z_start: Tensor,
                variant: JiTVariant) -> tuple[Tensor, Tensor]:
    """Apply the variant's head and derive the other quantity: -> (z1_hat, u_hat)."""
    if variant.predict == "x":
        z1_hat = nd.linear(h_t, params["head.x_w"], params["head.x_b"])
        u_hat = nd.sub(z1_hat, z_start)
    else:
        u_hat = nd.linear(h_t, params["head.v_w"], params["head.v_b"])
        z1_hat = nd.add(z_start, u_hat)
    return z1_hat, u_hat


def jit_loss(z1_hat: Tensor, u_hat: Tensor, z_start: Tensor, z1: Tensor,
             loss_space: str) -> Tensor:
    """Mean squared error in endpoint ('x') or displacement ('v') space.

    The displacement target is taken against the start state, so the two
    spaces are algebraically identical for any prediction.
    """
    if loss_space == "x":
        return nd.mse(z1_hat, z1)
    if loss_space == "v":
        return nd.mse(u_hat, nd.sub(z1, z_start))
    raise ConfigError(f"unknown loss space {loss_space!r}")


def generate_latent(params: ParamSet, cfg: TransportConfig, z_start: Tensor,
                    cond: ConditionBatch, variant: JiTVariant,
                    pooling: str = "seed", steps: int = 1) -> Tensor:
    """Transport start latents to predicted perturbed latents.

    Endpoint-prediction variants evaluate the head once at t=0;
    displacement variants take ``steps`` Euler steps of size 1/steps,
    re-predicting the displacement at each intermediate time.
    """
    if steps < 1:
        raise ArgumentError("steps must be >= 1")
    if variant.predict == "x":
        h = backbone(params, cfg, z_start, 0.0, cond, pooling)
        z1_hat, _ = jit_predict(params, h, z_start, variant)
        return z1_hat
    z = z_start
    for s in range(steps):
        h = backbone(params, cfg, z, s / steps, cond, pooling)
        _, u_hat = jit_predict(params, h, z, variant)
        z = nd.add(z, nd.mul(u_hat, 1.0 / steps))
    return z


def generate(params: ParamSet, enc_cfg: setenc.EncoderConfig, cfg: TransportConfig,
             x0: np.ndarray, cond: ConditionBatch, variant: JiTVariant,
             prior: PriorMode, pooling: str, steps: int,
             rng: np.random.Generator) -> np.ndarray:
    """Predict the post-perturbation population in expression space.

    Encodes the control set, builds the prior start state, transports it,
    and decodes; outputs are clamped at zero (log-space expression is
    non-negative). Deterministic given the generator state.
    """
    for name, t in params.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"parameter {name!r} contains non-finite values")
    x0_t = Tensor(np.asarray(x0, dtype=np.float64))
    z0 = setenc.encode(params, enc_cfg, x0_t)
    z_start = sample_start(z0, prior, rng)
    z1_hat = generate_latent(params, cfg, z_start, cond, variant, pooling, steps)
    return np.maximum(setenc.decode(params, enc_cfg, z1_hat).data, 0.0)
