"""Finite-difference gradient suite over every differentiable op and the full model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import affm, bpn, model, ops, rfc
from .config import Ablation, ModelConfig
from .layers import Params, init_conv
from .tensor import GradCheckResult, Tensor, backward, grad_check
from .trainer import boundary_targets, compute_loss

STEP = 1e-6
TOL = 1e-4


@dataclass
class CheckOutcome:
    name: str
    seed: int
    target: str
    result: GradCheckResult

    @property
    def passed(self) -> bool:
        return self.result.passed


def _t(rng, *shape, requires_grad=False) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=requires_grad)


def _weighted(y: Tensor, rng) -> Tensor:
    # random projection so every output entry carries a distinct gradient
    return ops.sum(ops.mul(y, Tensor(rng.normal(size=y.shape))))


def _conv(rng):
    x = _t(rng, 2, 3, 8, 8)
    p = ops.ConvParams(_t(rng, 4, 3, 3, 3, requires_grad=True), _t(rng, 4, requires_grad=True), 1, 1)
    f = lambda _: ops.sum(ops.sigmoid(ops.conv2d(x, p)))
    return {"x": (f, x), "kernel": (f, p.kernel), "bias": (f, p.bias)}


def _conv_strided(rng):
    x = _t(rng, 1, 2, 7, 7)
    p = ops.ConvParams(_t(rng, 3, 2, 3, 3, requires_grad=True), _t(rng, 3, requires_grad=True), 2, 1)
    f = lambda _: ops.sum(ops.sigmoid(ops.conv2d(x, p)))
    return {"x": (f, x), "kernel": (f, p.kernel)}


def _conv1x1(rng):
    x = _t(rng, 2, 3, 4, 4)
    p = ops.ConvParams(_t(rng, 2, 3, 1, 1, requires_grad=True), _t(rng, 2, requires_grad=True))
    f = lambda _: ops.sum(ops.sigmoid(ops.conv2d(x, p)))
    return {"x": (f, x), "kernel": (f, p.kernel), "bias": (f, p.bias)}


def _deconv(rng):
    x = _t(rng, 2, 3, 4, 4)
    p = ops.DeconvParams(_t(rng, 3, 2, 4, 4, requires_grad=True), _t(rng, 2, requires_grad=True))
    f = lambda _: ops.sum(ops.sigmoid(ops.deconv2d(x, p)))
    return {"x": (f, x), "kernel": (f, p.kernel), "bias": (f, p.bias)}


def _unary(op: Callable[[Tensor], Tensor], shape=(2, 3, 4, 4)):
    def build(rng):
        x = _t(rng, *shape)
        proj = Tensor(rng.normal(size=op(Tensor(np.zeros(shape))).shape))
        return {"x": (lambda t: ops.sum(ops.mul(op(t), proj)), x)}
    return build


def _binary(op):
    def build(rng):
        a, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
        proj = Tensor(rng.normal(size=(2, 3, 4, 4)))
        f = lambda _: ops.sum(ops.mul(op(a, b), proj))
        return {"a": (f, a), "b": (f, b)}
    return build


def _concat(rng):
    a, b = _t(rng, 2, 2, 3, 3), _t(rng, 2, 3, 3, 3)
    proj = Tensor(rng.normal(size=(2, 5, 3, 3)))
    f = lambda _: ops.sum(ops.mul(ops.concat([a, b]), proj))
    return {"a": (f, a), "b": (f, b)}


def _channel_mul(rng):
    x, w = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3)
    proj = Tensor(rng.normal(size=(2, 3, 4, 4)))
    f = lambda _: ops.sum(ops.mul(ops.channel_mul(x, w), proj))
    return {"x": (f, x), "w": (f, w)}


def _softmax(rng):
    v = _t(rng, 3, 6)
    proj = Tensor(rng.normal(size=(3, 6)))
    return {"v": (lambda t: ops.sum(ops.mul(ops.softmax_weights(t), proj)), v)}


def _sigmoid_ce(rng):
    z = Tensor(rng.normal(scale=3.0, size=(2, 1, 5, 5)))
    y = (rng.random((2, 1, 5, 5)) > 0.5).astype(np.float64)
    return {"logits": (lambda t: ops.sigmoid_ce(t, y), z),
            "logits_posw": (lambda t: ops.sigmoid_ce(t, y, pos_weight=3.0), z)}


def _slice(rng):
    x = _t(rng, 2, 6)
    proj = Tensor(rng.normal(size=(2, 2)))
    return {"x": (lambda t: ops.sum(ops.mul(ops.slice_channels(t, 1, 3), proj)), x)}


def _rcu(rng):
    params: Params = {}
    bpn.init_rcu(params, "r", 3, rng)
    x = _t(rng, 1, 3, 6, 6)
    proj = Tensor(rng.normal(size=(1, 3, 6, 6)))
    f = lambda _: ops.sum(ops.mul(bpn.rcu(params, "r", x), proj))
    return {"x": (f, x), "c1.w": (f, params["r.c1.w"]), "c2.w": (f, params["r.c2.w"])}


def _affm_fuse(rng):
    fr, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    proj = Tensor(rng.normal(size=(2, 3, 4, 4)))
    f = lambda _: ops.sum(ops.mul(affm.affm_fuse(fr, b), proj))
    return {"F_red": (f, fr), "B": (f, b)}


def _refine(rng):
    params: Params = {}
    for t in range(1, 5):
        init_conv(params, f"rfc.td{t}", 2, 2, 1, rng)
    for t in range(2, 6):
        init_conv(params, f"rfc.bu{t}", 2, 2, 1, rng)
    fs = [_t(rng, 1, 2, 2 ** (5 - t), 2 ** (5 - t)) for t in range(1, 6)]
    projs = [Tensor(rng.normal(size=f.shape)) for f in fs]

    def f(_):
        out = rfc.bidirectional_refine(params, fs)
        acc = ops.sum(ops.mul(out[0], projs[0]))
        for o, p in zip(out[1:], projs[1:]):
            acc = ops.add(acc, ops.sum(ops.mul(o, p)))
        return acc

    return {"f1": (f, fs[0]), "f3": (f, fs[2]), "f5": (f, fs[4]),
            "td2.w": (f, params["rfc.td2.w"]), "bu4.w": (f, params["rfc.bu4.w"])}


OP_CHECKS: dict[str, Callable] = {
    "conv2d": _conv,
    "conv2d_strided": _conv_strided,
    "conv1x1": _conv1x1,
    "deconv2d": _deconv,
    "relu": _unary(ops.relu),
    "sigmoid": _unary(ops.sigmoid),
    "add": _binary(ops.add),
    "mul": _binary(ops.mul),
    "concat": _concat,
    "slice": _slice,
    "channel_mul": _channel_mul,
    "max_pool2": _unary(ops.max_pool2),
    "avg_pool2": _unary(ops.avg_pool2),
    "upsample_nearest": _unary(lambda t: ops.upsample_nearest(t, 2)),
    "global_avg_pool": _unary(ops.global_avg_pool),
    "softmax_weights": _softmax,
    "sigmoid_ce": _sigmoid_ce,
    "rcu": _rcu,
    "affm_fuse": _affm_fuse,
    "bidirectional_refine": _refine,
}

TINY = ModelConfig(input_size=(32, 32), base_channels=4, boundary_channels=4, agg_channels=8,
                   ablation=Ablation.AFFM_PLUS)


def model_check(cfg: ModelConfig = TINY, seed: int = 0, per_tensor: int = 3,
                step: float = STEP, tol: float = TOL) -> list[CheckOutcome]:
    """Check d(total loss)/d(input and every parameter tensor) on a tiny network.

    Each parameter tensor is probed at ``per_tensor`` random entries.
    """
    rng = np.random.default_rng(seed)
    params = model.init_params(cfg, seed)
    # nonzero biases so no path is trivially symmetric
    for name, p in params.items():
        if name.endswith(".b"):
            p.data[...] = rng.normal(scale=0.1, size=p.shape)
    h, w = cfg.input_size
    x = Tensor(rng.normal(size=(1, 3, h, w)))
    masks = (rng.random((1, 1, h, w)) > 0.5).astype(np.float64)
    bnd = (rng.random((1, 1, h, w)) > 0.8).astype(np.float64)
    bt = boundary_targets(bnd, cfg.scales)

    def loss(_):
        out = model.forward(params, x, cfg)
        return compute_loss(out, masks, bt if out.boundary is not None else None)[0]

    # probe each tensor's largest-gradient entry plus random others; entries
    # far below the tensor's gradient scale sit under finite-difference noise
    x.requires_grad = True
    backward(loss(None))
    x.requires_grad = False
    results = []
    targets = [("input", x)] + list(params.items())
    for name, t in targets:
        top = int(np.abs(t.grad).argmax()) if t.grad is not None else 0
        t.grad = None
        others = rng.choice(t.size, size=min(per_tensor, t.size), replace=False)
        flat = [top] + [int(i) for i in others if i != top][: per_tensor - 1]
        idx = [np.unravel_index(i, t.shape) for i in flat]
        res = grad_check(loss, t, step, tol, indices=idx)
        t.requires_grad = name != "input"
        results.append(CheckOutcome("model", seed, name, res))
    return results


def op_checks(names=None, seeds=range(10), step: float = STEP, tol: float = TOL) -> list[CheckOutcome]:
    results = []
    for name in [n for n in (names or OP_CHECKS) if n != "model"]:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            for target, (f, x) in OP_CHECKS[name](rng).items():
                res = grad_check(f, x, step, tol)
                results.append(CheckOutcome(name, seed, target, res))
    return results


def run_suite(names=None, seeds=range(10), include_model: bool = True) -> list[CheckOutcome]:
    results = op_checks(names, seeds)
    if include_model and (names is None or "model" in names):
        results += model_check()
    return results
