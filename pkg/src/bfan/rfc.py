"""Resolution-based feature combination with bidirectional refinement.

Every saliency level is resampled to each scale tau (average-pool to shrink,
nearest upsampling to expand), concatenated in level order, and projected
to ``agg_channels`` by a 1x1 conv. A top-down then bottom-up pass adds
relu'd 1x1-conv messages from neighbouring scales.
"""
from __future__ import annotations

import numpy as np

from . import ops
from .backbone import FeaturePyramid, saliency_channels
from .config import ModelConfig
from .errors import ContractViolation
from .layers import Params, conv, init_conv
from .tensor import Tensor


def reshape_to_scale(f_m: Tensor, m: int, tau: int) -> Tensor:
    """Move a map from stride 2**m to stride 2**tau."""
    if not (1 <= m <= 5 and 1 <= tau <= 5):
        raise ContractViolation("rfc.reshape_to_scale", f"level {m} / scale {tau} out of range")
    x = f_m
    if m < tau:
        for _ in range(tau - m):
            x = ops.avg_pool2(x)
    elif m > tau:
        x = ops.upsample_nearest(x, 2 ** (m - tau))
    return x


def init_rfc(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    cat = sum(saliency_channels(cfg))
    for t in range(1, cfg.scales + 1):
        init_conv(params, f"rfc.proj{t}", cat, cfg.agg_channels, 1, rng)
    for t in range(1, cfg.scales):
        init_conv(params, f"rfc.td{t}", cfg.agg_channels, cfg.agg_channels, 1, rng)
    for t in range(2, cfg.scales + 1):
        init_conv(params, f"rfc.bu{t}", cfg.agg_channels, cfg.agg_channels, 1, rng)


def rfc_concat(pyramid: FeaturePyramid, tau: int) -> Tensor:
    if len(pyramid) != 4:
        raise ContractViolation("rfc.rfc_aggregate", f"expected 4 levels, got {len(pyramid)}")
    return ops.concat([reshape_to_scale(f, m, tau) for m, f in enumerate(pyramid.maps, 1)])


def rfc_aggregate(params: Params, pyramid: FeaturePyramid, tau: int) -> Tensor:
    return conv(params, f"rfc.proj{tau}", rfc_concat(pyramid, tau))


def bidirectional_refine(params: Params, f: list[Tensor]) -> list[Tensor]:
    """Top-down (tau = 4..1) then bottom-up (tau = 2..5) additive refinement."""
    if len(f) != 5:
        raise ContractViolation("rfc.bidirectional_refine", f"expected 5 scales, got {len(f)}")
    f = list(f)
    for t in range(4, 0, -1):
        msg = conv(params, f"rfc.td{t}", ops.upsample_nearest(f[t], 2))
        f[t - 1] = ops.add(f[t - 1], ops.relu(msg))
    for t in range(2, 6):
        msg = conv(params, f"rfc.bu{t}", ops.avg_pool2(f[t - 2]))
        f[t - 1] = ops.add(f[t - 1], ops.relu(msg))
    return f


def aggregate(params: Params, pyramid: FeaturePyramid, cfg: ModelConfig) -> list[Tensor]:
    """Aggregated features F^tau for tau = 1..5 (index 0 is tau = 1)."""
    f = [rfc_aggregate(params, pyramid, t) for t in range(1, cfg.scales + 1)]
    return bidirectional_refine(params, f)
