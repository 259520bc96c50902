"""The assembled perturbation model: encoder + decoder + transport stack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndmath as nd
from . import setenc, transport
from .errors import ConfigError
from .ndmath import ParamSet, Tensor


@dataclass(frozen=True)
class LossTerms:
    """Scalar tensors of one training objective evaluation. ``total`` is the
    last node recorded on the tape, so it is the backward seed point."""

    mse: Tensor
    mmd: Tensor
    flow: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "mse": self.mse.item(),
            "mmd": self.mmd.item(),
            "flow": self.flow.item(),
            "total": self.total.item(),
        }


class PerturbationModel:
    """Parameter bundle plus the forward passes built on it.

    The same ParamSet carries both prediction heads and all pooling
    weights, so variant/pooling/prior are runtime modes and checkpoints
    stay compatible across ablations.
    """

    def __init__(self, enc_cfg: setenc.EncoderConfig, tr_cfg: transport.TransportConfig,
                 params: ParamSet):
        if enc_cfg.latent_width != tr_cfg.latent_width:
            raise ConfigError("encoder and transport latent widths disagree")
        self.enc_cfg = enc_cfg
        self.tr_cfg = tr_cfg
        self.params = params

    @classmethod
    def build(cls, enc_cfg: setenc.EncoderConfig, tr_cfg: transport.TransportConfig,
              seed: int) -> "PerturbationModel":
        params = ParamSet()
        rng = np.random.default_rng(seed)
        setenc.add_encoder_params(params, enc_cfg, rng)
        transport.add_transport_params(params, tr_cfg, rng)
        return cls(enc_cfg, tr_cfg, params)

    def encode(self, x: Tensor) -> Tensor:
        return setenc.encode(self.params, self.enc_cfg, x)

    def decode(self, z: Tensor) -> Tensor:
        return setenc.decode(self.params, self.enc_cfg, z)

    def generate(self, x0: np.ndarray, cond: transport.ConditionBatch,
                 variant: transport.JiTVariant, prior: transport.PriorMode,
                 pooling: str, steps: int, rng: np.random.Generator) -> np.ndarray:
        return transport.generate(self.params, self.enc_cfg, self.tr_cfg, x0, cond,
                                  variant, prior, pooling, steps, rng)


def training_loss(model: PerturbationModel, x0: np.ndarray, x1: np.ndarray,
                  cond: transport.ConditionBatch, *,
                  variant: transport.JiTVariant, prior: transport.PriorMode,
                  pooling: str, t: float, draw: transport.StartDraw,
                  flow_weight: float = 1.0,
                  ae_weight: float = 1.0) -> LossTerms:
    """Joint objective on one batch with all randomness pre-drawn.

    Passing ``t`` and ``draw`` explicitly keeps the loss a pure function of
    the parameters, which the finite-difference checks rely on.
    """
    p, enc_cfg, tr_cfg = model.params, model.enc_cfg, model.tr_cfg
    x0_t, x1_t = Tensor(x0), Tensor(x1)
    z0 = setenc.encode(p, enc_cfg, x0_t)
    z1 = setenc.encode(p, enc_cfg, x1_t)
    xh0 = setenc.decode(p, enc_cfg, z0)
    xh1 = setenc.decode(p, enc_cfg, z1)
    mse_term, mmd_term = setenc.ae_loss_terms(x0_t, x1_t, xh0, xh1, enc_cfg.mmd_bandwidths)

    z_start = transport.apply_start(z0, prior, draw)
    z_t = transport.interpolate(z_start, z1, t)
    h_t = transport.backbone(p, tr_cfg, z_t, t, cond, pooling)
    z1_hat, u_hat = transport.jit_predict(p, h_t, z_start, variant)
    flow = transport.jit_loss(z1_hat, u_hat, z_start, z1, variant.loss_space)

    ae = nd.add(mse_term, nd.mul(mmd_term, enc_cfg.mmd_weight))
    total = nd.add(nd.mul(ae, float(ae_weight)), nd.mul(flow, float(flow_weight)))
    return LossTerms(mse=mse_term, mmd=mmd_term, flow=flow, total=total)
