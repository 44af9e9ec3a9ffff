"""Named-parameter helpers for building the network out of :mod:`bfan.ops`.

Parameters live in a flat ``dict[str, Tensor]`` keyed ``"<layer>.w"`` /
``"<layer>.b"``; insertion order is the canonical order used by checkpoints.
"""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor

Params = dict[str, Tensor]


def msra(rng: np.random.Generator, shape: tuple[int, ...], fan_in: float) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


def init_conv(params: Params, name: str, cin: int, cout: int, k: int, rng: np.random.Generator) -> None:
    params[f"{name}.w"] = Tensor(msra(rng, (cout, cin, k, k), cin * k * k), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def init_deconv(params: Params, name: str, cin: int, cout: int, rng: np.random.Generator,
                k: int = 4, stride: int = 2) -> None:
    # each output pixel sees cin * (k / stride)^2 taps
    params[f"{name}.w"] = Tensor(msra(rng, (cin, cout, k, k), cin * (k / stride) ** 2), requires_grad=True)
    params[f"{name}.b"] = Tensor(np.zeros(cout), requires_grad=True)


def conv(params: Params, name: str, x: Tensor, stride: int = 1, padding: int | None = None) -> Tensor:
    w = params[f"{name}.w"]
    if padding is None:
        padding = w.shape[2] // 2
    return ops.conv2d(x, ops.ConvParams(w, params[f"{name}.b"], stride, padding))


def deconv(params: Params, name: str, x: Tensor, stride: int = 2, padding: int = 1) -> Tensor:
    return ops.deconv2d(x, ops.DeconvParams(params[f"{name}.w"], params[f"{name}.b"], stride, padding))


def zero_params(params: Params, prefix: str = "") -> None:
    for name, p in params.items():
        if name.startswith(prefix):
            p.data[...] = 0.0
