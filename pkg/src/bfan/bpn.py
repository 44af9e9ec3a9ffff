"""Boundary prediction network.

B^5 = RCU(B_f^5); B^tau = deconv(B^(tau+1)) + RCU(B_f^tau) for tau < 5, with a
1x1 head per scale producing boundary logits and one more deconv lifting
B^1 to input resolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .backbone import FeaturePyramid
from .config import ModelConfig
from .errors import ContractViolation
from .layers import Params, conv, deconv, init_conv, init_deconv
from .tensor import Tensor


@dataclass
class BoundaryOutputs:
    features: list[Tensor]     # B^tau, index 0 is tau = 1
    predictions: list[Tensor]  # B_p^tau logits, 1 channel
    full: Tensor | None = None  # B at input resolution


def init_rcu(params: Params, name: str, c: int, rng: np.random.Generator) -> None:
    init_conv(params, f"{name}.c1", c, c, 3, rng)
    init_conv(params, f"{name}.c2", c, c, 3, rng)


def rcu(params: Params, name: str, x: Tensor) -> Tensor:
    """relu -> conv3x3 -> relu -> conv3x3, plus the identity skip."""
    y = conv(params, f"{name}.c1", ops.relu(x))
    y = conv(params, f"{name}.c2", ops.relu(y))
    return ops.add(x, y)


def init_bpn(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    c = cfg.boundary_channels
    for t in range(1, cfg.scales + 1):
        if cfg.ablation.uses_rcu:
            for r in range(cfg.rcu_count):
                init_rcu(params, f"bpn.rcu{t}.{r}", c, rng)
        if t < cfg.scales:
            init_deconv(params, f"bpn.up{t}", c, c, rng)
        init_conv(params, f"bpn.head{t}", c, 1, 1, rng)
    init_deconv(params, "bpn.full", c, c, rng)


def _rcus(params: Params, cfg: ModelConfig, t: int, x: Tensor) -> Tensor:
    if cfg.ablation.uses_rcu:
        for r in range(cfg.rcu_count):
            x = rcu(params, f"bpn.rcu{t}.{r}", x)
    return x


def bpn_forward(params: Params, bf: FeaturePyramid, cfg: ModelConfig) -> BoundaryOutputs:
    if len(bf) != cfg.scales:
        raise ContractViolation("bpn.bpn_forward", f"expected {cfg.scales} scales, got {len(bf)}")
    feats: list[Tensor | None] = [None] * cfg.scales
    feats[-1] = _rcus(params, cfg, cfg.scales, bf[cfg.scales - 1])
    for t in range(cfg.scales - 1, 0, -1):
        up = deconv(params, f"bpn.up{t}", feats[t])
        side = _rcus(params, cfg, t, bf[t - 1])
        if up.shape != side.shape:
            raise ContractViolation("bpn.bpn_forward", f"cannot add {up.shape} and {side.shape}")
        feats[t - 1] = ops.add(up, side)
    preds = [conv(params, f"bpn.head{t}", feats[t - 1]) for t in range(1, cfg.scales + 1)]
    return BoundaryOutputs(feats, preds)


def boundary_full_res(params: Params, b1: Tensor) -> Tensor:
    """Lift B^1 (stride 2) to input resolution."""
    return deconv(params, "bpn.full", b1)
