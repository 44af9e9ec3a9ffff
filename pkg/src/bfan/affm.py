"""Attention-based feature fusion, fused prediction modules, and the final merge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import Ablation, ModelConfig
from .errors import ContractViolation
from .layers import Params, conv, init_conv
from .tensor import Tensor


@dataclass
class PredictionSet:
    stages: dict[int, Tensor]  # tau -> full-resolution logit map
    final: Tensor


def init_affm(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    n = cfg.boundary_channels
    for t in cfg.fpm_subset:
        if cfg.ablation is Ablation.BASELINE:
            init_conv(params, f"affm.fpm{t}", cfg.agg_channels, 1, 3, rng)
            continue
        init_conv(params, f"affm.reduce{t}", cfg.agg_channels, n, 1, rng)
        if cfg.ablation is not Ablation.AFFM_PLUS:
            init_conv(params, f"affm.cat{t}", 2 * n, n, 1, rng)
        init_conv(params, f"affm.fpm{t}", n, 1, 3, rng)
    init_conv(params, "affm.merge", len(cfg.fpm_subset), 1, 1, rng)


def reduce_channels(params: Params, f_tau: Tensor, tau: int) -> Tensor:
    return conv(params, f"affm.reduce{tau}", f_tau)


def fusion_weights(f_red: Tensor, b_tau: Tensor) -> tuple[Tensor, Tensor]:
    """Joint softmax over the 2n pooled channels, split into (w_F, w_B)."""
    n = f_red.shape[1]
    v = ops.concat([ops.global_avg_pool(f_red), ops.global_avg_pool(b_tau)], axis=1)
    w = ops.softmax_weights(v)
    return ops.slice_channels(w, 0, n), ops.slice_channels(w, n, 2 * n)


def affm_fuse(f_red: Tensor, b_tau: Tensor) -> Tensor:
    """(w_F * F) + (w_B * B) with channel-wise weights from :func:`fusion_weights`."""
    if f_red.shape != b_tau.shape:
        raise ContractViolation("affm.affm_fuse", f"operand shapes differ: {f_red.shape} vs {b_tau.shape}")
    w_f, w_b = fusion_weights(f_red, b_tau)
    return ops.add(ops.channel_mul(f_red, w_f), ops.channel_mul(b_tau, w_b))


def concat_fuse(params: Params, f_red: Tensor, b_tau: Tensor, tau: int) -> Tensor:
    """Plain concat + 1x1 conv used by the Boundary+/- ablations."""
    if f_red.shape != b_tau.shape:
        raise ContractViolation("affm.concat_fuse", f"operand shapes differ: {f_red.shape} vs {b_tau.shape}")
    return conv(params, f"affm.cat{tau}", ops.concat([f_red, b_tau]))


def fpm_predict(params: Params, fused: Tensor, tau: int) -> Tensor:
    """3x3 conv to one channel, then nearest upsampling by 2**tau."""
    return ops.upsample_nearest(conv(params, f"affm.fpm{tau}", fused), 2 ** tau)


def final_merge(params: Params, stage_maps: list[Tensor], name: str = "affm.merge") -> Tensor:
    if not stage_maps:
        raise ContractViolation("affm.final_merge", "no stage maps to merge")
    return conv(params, name, ops.concat(stage_maps))


def predict(params: Params, f_agg: list[Tensor], b_full: Tensor | None, cfg: ModelConfig) -> PredictionSet:
    """Stage maps for every tau in ``cfg.fpm_subset`` and their merged final map."""
    stages: dict[int, Tensor] = {}
    b_tau = b_full
    for t in range(1, cfg.scales + 1):
        if b_tau is not None:
            b_tau = ops.avg_pool2(b_tau)
        if t not in cfg.fpm_subset:
            continue
        f = f_agg[t - 1]
        if cfg.ablation is Ablation.BASELINE:
            fused = f
        else:
            if b_tau is None:
                raise ContractViolation("affm.predict", f"{cfg.ablation.value} needs boundary features")
            f_red = reduce_channels(params, f, t)
            if cfg.ablation is Ablation.AFFM_PLUS:
                fused = affm_fuse(f_red, b_tau)
            else:
                fused = concat_fuse(params, f_red, b_tau, t)
        stages[t] = fpm_predict(params, fused, t)
    final = final_merge(params, [stages[t] for t in cfg.fpm_subset])
    return PredictionSet(stages, final)
