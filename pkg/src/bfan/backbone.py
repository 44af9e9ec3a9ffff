"""Mini-encoders standing in for the ResNet-101 and VGG-16 backbones.

Each block is conv3x3 -> relu -> conv3x3 -> relu -> 2x max-pool, so block
``i`` (1-based) emits features at stride ``2**i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .config import ModelConfig
from .errors import ContractViolation
from .layers import Params, conv, init_conv
from .tensor import Tensor


@dataclass
class FeaturePyramid:
    maps: list[Tensor]

    def __len__(self) -> int:
        return len(self.maps)

    def __getitem__(self, i: int) -> Tensor:
        return self.maps[i]

    def spatial(self) -> list[tuple[int, int]]:
        return [m.shape[2:] for m in self.maps]


def saliency_channels(cfg: ModelConfig) -> list[int]:
    return [cfg.base_channels * m for m in range(1, cfg.levels_saliency + 1)]


def init_saliency_encoder(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    cin = 3
    for m, c in enumerate(saliency_channels(cfg), 1):
        init_conv(params, f"sal.b{m}.c1", cin, c, 3, rng)
        init_conv(params, f"sal.b{m}.c2", c, c, 3, rng)
        cin = c


def init_boundary_encoder(params: Params, cfg: ModelConfig, rng: np.random.Generator) -> None:
    cin = 3
    c = cfg.boundary_channels
    for t in range(1, cfg.scales + 1):
        init_conv(params, f"bnd.b{t}.c1", cin, c, 3, rng)
        init_conv(params, f"bnd.b{t}.c2", c, c, 3, rng)
        cin = c


def _check_input(img: Tensor, cfg: ModelConfig, where: str) -> None:
    if img.data.ndim != 4 or img.shape[1] != 3:
        raise ContractViolation(where, f"expected [N,3,H,W] input, got {img.shape}")
    h, w = img.shape[2:]
    if h % 32 or w % 32:
        raise ContractViolation(where, f"input {h}x{w} not divisible by 32")


def _block(params: Params, prefix: str, x: Tensor) -> Tensor:
    x = ops.relu(conv(params, f"{prefix}.c1", x))
    x = ops.relu(conv(params, f"{prefix}.c2", x))
    return ops.max_pool2(x)


def saliency_encoder(params: Params, img: Tensor, cfg: ModelConfig) -> FeaturePyramid:
    """Four feature maps F_m at strides 2, 4, 8, 16 with base_channels*m channels."""
    _check_input(img, cfg, "backbone.saliency_encoder")
    maps, x = [], img
    for m in range(1, cfg.levels_saliency + 1):
        x = _block(params, f"sal.b{m}", x)
        maps.append(x)
    return FeaturePyramid(maps)


def boundary_encoder(params: Params, img: Tensor, cfg: ModelConfig) -> FeaturePyramid:
    """Five boundary feature stacks at strides 2 .. 32."""
    _check_input(img, cfg, "backbone.boundary_encoder")
    maps, x = [], img
    for t in range(1, cfg.scales + 1):
        x = _block(params, f"bnd.b{t}", x)
        maps.append(x)
    return FeaturePyramid(maps)
