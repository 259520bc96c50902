"""Hierarchical set-aware encoder/decoder and the joint MSE-MMD objective.

Sets of cells are unordered: the per-cell stage is shared across cells
(permutation equivariant), the population summary is a mean over cells
(permutation invariant), and the fusion stage reinjects the summary into
every cell embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from .errors import ArgumentError, ConfigError
from .ndmath import ParamSet, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    """Widths and depths of the encoder/decoder stack.

    ``gene_tokens`` must divide ``genes``: each cell's expression vector is
    split into that many contiguous chunks before the gene-axis attention
    stack.
    """

    genes: int
    gene_tokens: int = 4
    cell_width: int = 32
    phi_width: int = 32
    summary_width: int = 32
    latent_width: int = 16
    blocks: int = 2
    n_heads: int = 1
    decoder_hidden: int = 64
    mmd_weight: float = 1.0
    mmd_bandwidths: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    norm_eps: float = 1e-8

    def __post_init__(self):
        if self.genes < 1 or self.gene_tokens < 1:
            raise ConfigError("genes and gene_tokens must be >= 1")
        if self.genes % self.gene_tokens != 0:
            raise ConfigError(
                f"gene_tokens={self.gene_tokens} does not divide genes={self.genes}"
            )
        for name in ("cell_width", "phi_width", "summary_width", "latent_width",
                     "blocks", "decoder_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mmd_weight < 0:
            raise ConfigError("mmd_weight must be >= 0")
        if self.cell_width % self.n_heads != 0:
            raise ConfigError("n_heads must divide cell_width")

    @property
    def chunk(self) -> int:
        return self.genes // self.gene_tokens


def add_encoder_params(params: ParamSet, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    """Register all encoder/decoder weights under ``enc.*`` / ``dec.*``."""
    # per-gene affine standardization at the model boundary; initialized to
    # the identity, usually re-seeded from data statistics before training
    params.zeros("enc.input_loc", (cfg.genes,))
    params.ones("enc.input_inv_scale", (cfg.genes,))
    params.zeros("dec.output_loc", (cfg.genes,))
    params.ones("dec.output_scale", (cfg.genes,))
    params.matrix("enc.token_embed", rng, cfg.chunk, cfg.cell_width)
    params.zeros("enc.token_bias", (cfg.cell_width,))
    # learned position embedding on the gene-token axis only; the cell axis
    # stays symmetric
    params.add("enc.pos_embed",
               nd.glorot_uniform(rng, cfg.cell_width, cfg.cell_width,
                                 shape=(cfg.gene_tokens, cfg.cell_width)))
    for layer in range(cfg.blocks):
        nd.add_block_params(params, f"enc.blk{layer}", cfg.cell_width, rng)
    params.matrix("enc.phi.w1", rng, cfg.cell_width, cfg.phi_width)
    params.zeros("enc.phi.b1", (cfg.phi_width,))
    params.matrix("enc.phi.w2", rng, cfg.phi_width, cfg.phi_width)
    params.zeros("enc.phi.b2", (cfg.phi_width,))
    params.matrix("enc.rho.w1", rng, cfg.phi_width, cfg.summary_width)
    params.zeros("enc.rho.b1", (cfg.summary_width,))
    params.matrix("enc.rho.w2", rng, cfg.summary_width, cfg.summary_width)
    params.zeros("enc.rho.b2", (cfg.summary_width,))
    fuse_in = cfg.cell_width + cfg.summary_width
    params.matrix("enc.fuse.w1", rng, fuse_in, cfg.latent_width)
    params.zeros("enc.fuse.b1", (cfg.latent_width,))
    params.matrix("enc.fuse.w2", rng, cfg.latent_width, cfg.latent_width)
    params.zeros("enc.fuse.b2", (cfg.latent_width,))
    params.matrix("dec.w1", rng, cfg.latent_width, cfg.decoder_hidden)
    params.zeros("dec.b1", (cfg.decoder_hidden,))
    params.matrix("dec.w2", rng, cfg.decoder_hidden, cfg.genes)
    params.zeros("dec.b2", (cfg.genes,))


def encode_cells(params: ParamSet, cfg: EncoderConfig, x: Tensor) -> Tensor:
    """Per-cell gene encoder, shared across cells: (B, N, G) -> (B, N, cell_width).

    Each cell is chunked into gene tokens, embedded, run through the
    attention stack, and mean-pooled over tokens. No cell ever sees
    another, so permuting cells permutes outputs identically.
    """
    b, n, g = x.shape
    if g != cfg.genes:
        raise ArgumentError(f"expected {cfg.genes} genes, got {g}")
    x = nd.mul(nd.sub(x, params["enc.input_loc"]), params["enc.input_inv_scale"])
    tokens = nd.reshape(x, (b * n, cfg.gene_tokens, cfg.chunk))
    h = nd.add(nd.linear(tokens, params["enc.token_embed"], params["enc.token_bias"]),
               params["enc.pos_embed"])
    for layer in range(cfg.blocks):
        h = nd.prenorm_block(h, nd.block_params(params, f"enc.blk{layer}"),
                             cfg.n_heads, cfg.norm_eps)
    pooled = nd.tmean(h, axis=1)
    return nd.reshape(pooled, (b, n, cfg.cell_width))


def aggregate(params: ParamSet, cfg: EncoderConfig, h: Tensor) -> Tensor:
    """Permutation-invariant population summary: (B, N, cell_width) -> (B, summary_width)."""
    phi = nd.perceptron2(h, params["enc.phi.w1"], params["enc.phi.b1"],
                         params["enc.phi.w2"], params["enc.phi.b2"])
    pooled = nd.tmean(phi, axis=1)
    return nd.perceptron2(pooled, params["enc.rho.w1"], params["enc.rho.b1"],
                          params["enc.rho.w2"], params["enc.rho.b2"])


def fuse(params: ParamSet, cfg: EncoderConfig, h: Tensor, s: Tensor) -> Tensor:
    """Re-inject the set summary into every cell embedding: -> (B, N, latent_width)."""
    b, n, _ = h.shape
    s_rows = nd.broadcast_to(nd.reshape(s, (b, 1, cfg.summary_width)),
                             (b, n, cfg.summary_width))
    joined = nd.concat([h, s_rows], axis=2)
    return nd.perceptron2(joined, params["enc.fuse.w1"], params["enc.fuse.b1"],
                          params["enc.fuse.w2"], params["enc.fuse.b2"])


def encode(params: ParamSet, cfg: EncoderConfig, x: Tensor) -> Tensor:
    """(B, N, G) -> (B, N, latent_width)."""
    h = encode_cells(params, cfg, x)
    return fuse(params, cfg, h, aggregate(params, cfg, h))


def decode(params: ParamSet, cfg: EncoderConfig, z: Tensor) -> Tensor:
    """Cell-wise reconstruction, shared across cells: (B, N, latent_width) -> (B, N, G)."""
    out = nd.perceptron2(z, params["dec.w1"], params["dec.b1"],
                         params["dec.w2"], params["dec.b2"])
    return nd.add(nd.mul(out, params["dec.output_scale"]), params["dec.output_loc"])


# ---------------------------------------------------------------------------
# maximum mean discrepancy


def _kernel_sum(sq_dists: Tensor, bandwidths) -> Tensor:
    """Sum of Gaussian kernels exp(-d^2 / (2 sigma^2)) over the bandwidth set."""
    if not bandwidths:
        raise ArgumentError("need at least one bandwidth")
    total = None
    for sigma in bandwidths:
        term = nd.exp(nd.mul(sq_dists, -1.0 / (2.0 * float(sigma) ** 2)))
        total = term if total is None else nd.add(total, term)
    return total


def _pairwise_sq_dists(a: Tensor, b: Tensor) -> Tensor:
    """(.., n, d) x (.., m, d) -> (.., n, m) squared Euclidean distances."""
    aa = nd.tsum(nd.mul(a, a), axis=-1, keepdims=True)
    bb = nd.tsum(nd.mul(b, b), axis=-1, keepdims=True)
    cross = nd.matmul(a, nd.swap_last2(b))
    return nd.add(nd.sub(aa, nd.mul(cross, 2.0)), nd.swap_last2(bb))


def mmd2(a: Tensor, b: Tensor, bandwidths=(1.0, 2.0, 4.0, 8.0)) -> Tensor:
    """Biased (V-statistic) squared MMD between two sets of vectors.

    Expectations include the diagonal pairs, so identical sets give exactly
    zero up to rounding and the result is never meaningfully negative. The
    arguments are put in a canonical order first, so swapping them returns
    the bit-identical value.
    """
    a, b = nd.as_tensor(a), nd.as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ArgumentError("mmd2 expects 2-D sets of vectors")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ArgumentError("mmd2 needs non-empty sets")
    if (a.shape[0], a.data.tobytes()) > (b.shape[0], b.data.tobytes()):
        a, b = b, a
    k_aa = nd.tmean(_kernel_sum(_pairwise_sq_dists(a, a), bandwidths))
    k_bb = nd.tmean(_kernel_sum(_pairwise_sq_dists(b, b), bandwidths))
    k_ab = nd.tmean(_kernel_sum(_pairwise_sq_dists(a, b), bandwidths))
    return nd.add(nd.sub(k_aa, nd.mul(k_ab, 2.0)), k_bb)


def mmd2_per_set(a: Tensor, b: Tensor, bandwidths) -> Tensor:
    """Batched MMD^2 between matched sets: (B, N, d) x (B, M, d) -> mean over B."""
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ArgumentError("mmd2 needs non-empty sets")
    k_aa = _kernel_sum(_pairwise_sq_dists(a, a), bandwidths)
    k_bb = _kernel_sum(_pairwise_sq_dists(b, b), bandwidths)
    k_ab = _kernel_sum(_pairwise_sq_dists(a, b), bandwidths)
    per_set = nd.add(
        nd.sub(nd.tmean(nd.reshape(k_aa, (a.shape[0], -1)), axis=1),
               nd.mul(nd.tmean(nd.reshape(k_ab, (a.shape[0], -1)), axis=1), 2.0)),
        nd.tmean(nd.reshape(k_bb, (b.shape[0], -1)), axis=1),
    )
    return nd.tmean(per_set)


def ae_loss_terms(x0: Tensor, x1: Tensor, xh0: Tensor, xh1: Tensor,
                  bandwidths=(1.0, 2.0, 4.0, 8.0)) -> tuple[Tensor, Tensor]:
    """(reconstruction MSE, batch-averaged per-set MMD^2) for both populations."""
    if x0.shape != xh0.shape or x1.shape != xh1.shape:
        raise ArgumentError("reconstruction shapes must match inputs")
    mse_term = nd.add(nd.mse(xh0, x0), nd.mse(xh1, x1))
    mmd_term = nd.add(mmd2_per_set(xh0, x0, bandwidths),
                      mmd2_per_set(xh1, x1, bandwidths))
    return mse_term, mmd_term


def ae_loss(x0: Tensor, x1: Tensor, xh0: Tensor, xh1: Tensor,
            mmd_weight: float, bandwidths=(1.0, 2.0, 4.0, 8.0)) -> Tensor:
    """Joint reconstruction objective: MSE plus weighted per-set MMD^2."""
    if mmd_weight < 0:
        raise ConfigError("mmd_weight must be >= 0")
    mse_term, mmd_term = ae_loss_terms(x0, x1, xh0, xh1, bandwidths)
    return nd.add(mse_term, nd.mul(mmd_term, float(mmd_weight)))
