"""Full network: encoders, RFC aggregation, boundary branch, fusion heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import affm, backbone, bpn, rfc
from .affm import PredictionSet
from .bpn import BoundaryOutputs
from .config import ModelConfig
from .layers import Params
from .tensor import Tensor


@dataclass
class Outputs:
    preds: PredictionSet
    boundary: BoundaryOutputs | None
    aggregated: list[Tensor]


def init_params(cfg: ModelConfig, seed: int | None = None) -> Params:
    rng = np.random.default_rng(cfg.rng_seed if seed is None else seed)
    params: Params = {}
    backbone.init_saliency_encoder(params, cfg, rng)
    rfc.init_rfc(params, cfg, rng)
    if cfg.ablation.uses_boundary:
        backbone.init_boundary_encoder(params, cfg, rng)
        bpn.init_bpn(params, cfg, rng)
    affm.init_affm(params, cfg, rng)
    return params


def forward(params: Params, img: Tensor, cfg: ModelConfig) -> Outputs:
    pyramid = backbone.saliency_encoder(params, img, cfg)
    f_agg = rfc.aggregate(params, pyramid, cfg)
    boundary = None
    b_full = None
    if cfg.ablation.uses_boundary:
        bf = backbone.boundary_encoder(params, img, cfg)
        boundary = bpn.bpn_forward(params, bf, cfg)
        b_full = bpn.boundary_full_res(params, boundary.features[0])
        boundary.full = b_full
    preds = affm.predict(params, f_agg, b_full, cfg)
    return Outputs(preds, boundary, f_agg)


def count_params(params: Params) -> int:
    return sum(p.size for p in params.values())
