"""Differentiable neural-network primitives on NCHW float64 tensors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractViolation
from .tensor import Tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise sum (numpy broadcasting)."""
    out = a.data + b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return Tensor.from_op(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return Tensor.from_op(
        np.array([a.data.sum()]), (a,),
        lambda g: (np.broadcast_to(g.reshape(()), a.shape).copy(),),
        "sum",
    )


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor.from_op(
        np.array([a.data.mean()]), (a,),
        lambda g: (np.full(a.shape, g.reshape(()) / n),),
        "mean",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid_array(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_array(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def channel_mul(x: Tensor, w: Tensor) -> Tensor:
    """Channel-wise product: scale channel c of ``x`` [N,C,H,W] by ``w`` [N,C] (or [C])."""
    if x.data.ndim != 4:
        raise ContractViolation("nn-ops.channel_mul", f"expected NCHW input, got {x.shape}")
    wd = w.data if w.data.ndim == 2 else w.data.reshape(1, -1)
    if wd.shape[1] != x.shape[1] or wd.shape[0] not in (1, x.shape[0]):
        raise ContractViolation("nn-ops.channel_mul", f"weights {w.shape} do not match input {x.shape}")
    wb = wd[:, :, None, None]

    def bwd(g):
        gw = (g * x.data).sum(axis=(2, 3))
        if w.data.ndim == 1 or wd.shape[0] == 1:
            gw = gw.sum(axis=0).reshape(w.shape)
        return g * wb, gw

    return Tensor.from_op(x.data * wb, (x, w), bwd, "channel_mul")


# ------------------------------------------------------------ shape plumbing

def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (channels by default)."""
    if not xs:
        raise ContractViolation("nn-ops.concat", "nothing to concatenate")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise ContractViolation("nn-ops.concat", str(exc)) from None

    def bwd(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs))
        )

    return Tensor.from_op(out, tuple(xs), bwd, "concat")


def slice_channels(x: Tensor, start: int, stop: int, axis: int = 1) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return Tensor.from_op(x.data[idx].copy(), (x,), bwd, "slice")


# -------------------------------------------------------------- convolution

@dataclass
class ConvParams:
    """Kernel [outC, inC, kH, kW], bias [outC], stride and zero padding."""

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.data.ndim != 4:
            raise ContractViolation("nn-ops.ConvParams", f"kernel must be 4-D, got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ContractViolation("nn-ops.ConvParams", "bias length must equal output channels")
        if self.stride < 1 or self.padding < 0:
            raise ContractViolation("nn-ops.ConvParams", "stride must be >= 1 and padding >= 0")

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel.shape[2:]
        return ((h + 2 * self.padding - kh) // self.stride + 1,
                (w + 2 * self.padding - kw) // self.stride + 1)


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """2-D cross-correlation plus per-channel bias."""
    k = p.kernel.data
    n, c, h, w = x.shape
    oc, ic, kh, kw = k.shape
    if ic != c:
        raise ContractViolation("nn-ops.conv2d", f"kernel expects {ic} input channels, got {c}")
    s, pad = p.stride, p.padding
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ContractViolation("nn-ops.conv2d", "padded input smaller than kernel")
    ho, wo = p.output_size(h, w)

    if kh == 1 and kw == 1 and s == 1 and pad == 0:
        out = np.einsum("oc,nchw->nohw", k[:, :, 0, 0], x.data, optimize=True)
        out += p.bias.data[None, :, None, None]

        def bwd1(g):
            gx = np.einsum("oc,nohw->nchw", k[:, :, 0, 0], g, optimize=True)
            gk = np.einsum("nohw,nchw->oc", g, x.data, optimize=True)[:, :, None, None]
            return gx, gk, g.sum(axis=(0, 2, 3))

        return Tensor.from_op(out, (x, p.kernel, p.bias), bwd1, "conv1x1")

    # columns are laid out channel-major, [C*kh*kw, N*Ho*Wo], so every
    # strided copy below moves contiguous rows
    xt = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    xt[:, :, pad : pad + h, pad : pad + w] = x.data.transpose(1, 0, 2, 3)
    cols = np.empty((c, kh, kw, n, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + s * ho : s, j : j + s * wo : s]
    cols = cols.reshape(c * kh * kw, n * ho * wo)
    kmat = k.reshape(oc, -1)
    out = (kmat @ cols).reshape(oc, n, ho, wo).transpose(1, 0, 2, 3)
    out = out + p.bias.data[None, :, None, None]

    def bwd(g):
        gt = g.transpose(1, 0, 2, 3).reshape(oc, n * ho * wo)
        gk = (gt @ cols.T).reshape(k.shape)
        gcols = (kmat.T @ gt).reshape(c, kh, kw, n, ho, wo)
        gxt = np.zeros_like(xt)
        for i in range(kh):
            for j in range(kw):
                gxt[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, i, j]
        gx = gxt[:, :, pad : pad + h, pad : pad + w].transpose(1, 0, 2, 3)
        return np.ascontiguousarray(gx), gk, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(np.ascontiguousarray(out), (x, p.kernel, p.bias), bwd, "conv2d")


@dataclass
class DeconvParams:
    """Transposed-convolution kernel [inC, outC, k, k] and bias [outC].

    The output is exactly ``stride`` times the input size, which requires
    ``k - 2 * padding == stride``.
    """

    kernel: Tensor
    bias: Tensor
    stride: int = 2
    padding: int = 1

    def __post_init__(self):
        k = self.kernel.data
        if k.ndim != 4 or k.shape[2] != k.shape[3]:
            raise ContractViolation("nn-ops.DeconvParams", f"kernel must be [inC,outC,k,k], got {k.shape}")
        if self.bias.shape != (k.shape[1],):
            raise ContractViolation("nn-ops.DeconvParams", "bias length must equal output channels")
        if k.shape[2] - 2 * self.padding != self.stride:
            raise ContractViolation(
                "nn-ops.DeconvParams",
                f"kernel {k.shape[2]}, padding {self.padding} do not give exact {self.stride}x upsampling",
            )


def deconv2d(x: Tensor, p: DeconvParams) -> Tensor:
    """Transposed convolution, output [N, outC, s*H, s*W]."""
    k = p.kernel.data
    n, c, h, w = x.shape
    ic, oc, ks, _ = k.shape
    if ic != c:
        raise ContractViolation("nn-ops.deconv2d", f"kernel expects {ic} input channels, got {c}")
    s, pad = p.stride, p.padding
    hf, wf = (h - 1) * s + ks, (w - 1) * s + ks

    xmat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    kmat = k.reshape(ic, oc * ks * ks)
    cols = (xmat @ kmat).reshape(n, h, w, oc, ks, ks)
    full = np.zeros((n, oc, hf, wf))
    for i in range(ks):
        for j in range(ks):
            full[:, :, i : i + s * (h - 1) + 1 : s, j : j + s * (w - 1) + 1 : s] += cols[..., i, j].transpose(0, 3, 1, 2)
    out = full[:, :, pad : pad + s * h, pad : pad + s * w] + p.bias.data[None, :, None, None]

    def bwd(g):
        gfull = np.zeros((n, oc, hf, wf))
        gfull[:, :, pad : pad + s * h, pad : pad + s * w] = g
        win = sliding_window_view(gfull, (ks, ks), axis=(2, 3))[:, :, ::s, ::s]  # N,O,H,W,k,k
        gcols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, oc * ks * ks)
        gx = (gcols @ kmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        gk = (xmat.T @ gcols).reshape(k.shape)
        return np.ascontiguousarray(gx), gk, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(np.ascontiguousarray(out), (x, p.kernel, p.bias), bwd, "deconv2d")


# ----------------------------------------------------------------- resampling

def _check_even(x: Tensor, where: str):
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ContractViolation(where, f"needs NCHW input with even spatial dims, got {x.shape}")


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max-pool, stride 2. Ties route the gradient to the first maximum."""
    _check_even(x, "nn-ops.max_pool2")
    n, c, h, w = x.shape
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return Tensor.from_op(out, (x,), bwd, "max_pool2")


def avg_pool2(x: Tensor) -> Tensor:
    _check_even(x, "nn-ops.avg_pool2")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return Tensor.from_op(out, (x,), bwd, "avg_pool2")


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel into a ``factor`` x ``factor`` block."""
    if int(factor) != factor or factor < 1:
        raise ContractViolation("nn-ops.upsample_nearest", f"factor must be a positive integer, got {factor}")
    f = int(factor)
    if f == 1:
        return x
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def bwd(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor.from_op(out, (x,), bwd, "upsample_nearest")


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))
    return Tensor.from_op(
        out, (x,),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
        "global_avg_pool",
    )


# ------------------------------------------------------------ normalization

def softmax_weights(v: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    if v.data.shape[-1] < 1:
        raise ContractViolation("nn-ops.softmax_weights", "empty vector")
    z = v.data - v.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (w * (g - (g * w).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(w, (v,), bwd, "softmax")


def sigmoid_ce(logits: Tensor, labels, pos_weight: float = 1.0) -> Tensor:
    """Mean sigmoid cross-entropy of ``logits`` against binary ``labels``.

    ``pos_weight`` scales the per-pixel loss of positive labels.
    """
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    z = logits.data
    if y.shape != z.shape:
        raise ContractViolation("nn-ops.sigmoid_ce", f"shape mismatch {z.shape} vs {y.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ContractViolation("nn-ops.sigmoid_ce", "labels must be 0 or 1")
    # max(z,0) - z*y + log(1 + exp(-|z|))
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    wts = 1.0 + (pos_weight - 1.0) * y if pos_weight != 1.0 else None
    if wts is not None:
        per = per * wts
    n = z.size

    def bwd(g):
        d = (sigmoid_array(z) - y) / n
        if wts is not None:
            d = d * wts
        return (d * g.reshape(()),)

    return Tensor.from_op(np.array([per.sum() / n]), (logits,), bwd, "sigmoid_ce")
