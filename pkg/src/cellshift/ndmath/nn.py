"""Reusable network pieces: linear maps, gated feed-forward, pre-norm blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamSet
from .tensor import Tensor, add, attention, matmul, mul, rmsnorm, sigmoid, silu


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def perceptron2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer perceptron with a gated (silu) activation in between."""
    return linear(silu(linear(x, w1, b1)), w2, b2)


def gated_ff(x: Tensor, w_value: Tensor, w_gate: Tensor) -> Tensor:
    """Two linear maps combined by elementwise sigmoid gating."""
    return mul(matmul(x, w_value), sigmoid(matmul(x, w_gate)))


@dataclass(frozen=True)
class BlockParams:
    """Weights of one pre-norm attention block."""

    norm1_gain: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    norm2_gain: Tensor
    ff_value: Tensor
    ff_gate: Tensor


def add_block_params(params: ParamSet, prefix: str, width: int, rng: np.random.Generator) -> None:
    params.ones(f"{prefix}.norm1_gain", (width,))
    for w in ("wq", "wk", "wv", "wo"):
        params.matrix(f"{prefix}.{w}", rng, width, width)
    params.ones(f"{prefix}.norm2_gain", (width,))
    params.matrix(f"{prefix}.ff_value", rng, width, width)
    params.matrix(f"{prefix}.ff_gate", rng, width, width)


def block_params(params: ParamSet, prefix: str) -> BlockParams:
    return BlockParams(
        norm1_gain=params[f"{prefix}.norm1_gain"],
        wq=params[f"{prefix}.wq"],
        wk=params[f"{prefix}.wk"],
        wv=params[f"{prefix}.wv"],
        wo=params[f"{prefix}.wo"],
        norm2_gain=params[f"{prefix}.norm2_gain"],
        ff_value=params[f"{prefix}.ff_value"],
        ff_gate=params[f"{prefix}.ff_gate"],
    )


def prenorm_block(x: Tensor, p: BlockParams, n_heads: int = 1, eps: float = 1e-8) -> Tensor:
    """rmsnorm -> attention -> residual, rmsnorm -> gated feed-forward -> residual."""
    h = rmsnorm(x, p.norm1_gain, eps)
    attended = attention(matmul(h, p.wq), matmul(h, p.wk), matmul(h, p.wv), n_heads)
    x = add(x, matmul(attended, p.wo))
    h = rmsnorm(x, p.norm2_gain, eps)
    return add(x, gated_ff(h, p.ff_value, p.ff_gate))
