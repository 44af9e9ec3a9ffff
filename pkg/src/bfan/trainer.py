"""Loss assembly, the SGD training loop, checkpoints, and inference."""
from __future__ import annotations

import csv
import io
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import model, ops
from .config import Ablation, ModelConfig, RunConfig, model_hash
from .data import SaliencySample, preprocess, write_pnm
from .errors import ConfigError, ContractViolation, DecodeError
from .layers import Params
from .optim import OptimState, lr_schedule, sgd_step
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

MAGIC = b"BFAN"
VERSION = 1


# ---------------------------------------------------------------------- loss

@dataclass
class LossBreakdown:
    final_saliency: float
    stage_saliency: dict[int, float]
    boundary: list[float]
    total: float

    @property
    def stage_mean(self) -> float:
        return float(np.mean(list(self.stage_saliency.values()))) if self.stage_saliency else 0.0

    @property
    def boundary_mean(self) -> float:
        return float(np.mean(self.boundary)) if self.boundary else 0.0


def boundary_targets(boundary: np.ndarray, scales: int = 5) -> list[np.ndarray]:
    """Full-resolution boundary mask [N,1,H,W] max-pooled 2x once per scale."""
    out, b = [], boundary
    for _ in range(scales):
        n, c, h, w = b.shape
        b = b.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
        out.append(b)
    return out


def compute_loss(outputs: model.Outputs, masks: np.ndarray, btargets: list[np.ndarray] | None,
                 boundary_weight: float = 1.0, supervise_stages: bool = True,
                 pos_weight: float = 1.0) -> tuple[Tensor, LossBreakdown]:
    """total = final + mean(stage losses) + boundary_weight * mean(boundary losses)."""
    preds = outputs.preds
    final = ops.sigmoid_ce(preds.final, masks)
    total = final
    stage_vals: dict[int, float] = {}
    if supervise_stages and preds.stages:
        stage_losses = {t: ops.sigmoid_ce(m, masks) for t, m in preds.stages.items()}
        stage_vals = {t: l.item() for t, l in stage_losses.items()}
        total = ops.add(total, ops.scale(_add_all(list(stage_losses.values())), 1.0 / len(stage_losses)))
    bvals: list[float] = []
    if outputs.boundary is not None and btargets is not None:
        blosses = [ops.sigmoid_ce(p, t, pos_weight) for p, t in zip(outputs.boundary.predictions, btargets)]
        bvals = [l.item() for l in blosses]
        if boundary_weight:
            total = ops.add(total, ops.scale(_add_all(blosses), boundary_weight / len(blosses)))
    return total, LossBreakdown(final.item(), stage_vals, bvals, total.item())


def _add_all(ts: list[Tensor]) -> Tensor:
    acc = ts[0]
    for t in ts[1:]:
        acc = ops.add(acc, t)
    return acc


# ------------------------------------------------------------------- batches

@dataclass
class Batch:
    images: np.ndarray      # [N,3,H,W] preprocessed
    masks: np.ndarray       # [N,1,H,W]
    boundaries: np.ndarray  # [N,1,H,W]


def make_batch(samples: list[SaliencySample], run: RunConfig) -> Batch:
    size = run.model.input_size
    imgs = np.stack([preprocess(s.image, size, run.train.mean_bgr, run.train.input_scale) for s in samples])
    for s in samples:
        if s.mask.shape != tuple(size):
            raise ContractViolation("trainer.make_batch", f"sample {s.id} is {s.mask.shape}, expected {size}")
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float64)
    bnd = np.stack([s.boundary for s in samples])[:, None].astype(np.float64)
    return Batch(imgs, masks, bnd)


# -------------------------------------------------------------------- training

@dataclass
class EpochLog:
    epoch: int
    lr: float
    total: float
    final: float
    stage_mean: float
    boundary_mean: float


@dataclass
class TrainResult:
    run: RunConfig
    params: Params
    state: OptimState
    epochs_done: int
    log: list[EpochLog] = field(default_factory=list)
    rng: np.random.Generator | None = None

    def checkpoint(self) -> "Checkpoint":
        return Checkpoint(self.run, self.params, dict(self.state.velocity), self.epochs_done,
                          self.rng.bit_generator.state if self.rng is not None else {})


LOG_FIELDS = ("epoch", "lr", "total", "final", "stage_mean", "boundary_mean")


def write_loss_log(rows: Iterable[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r.epoch, repr(r.lr), repr(r.total), repr(r.final), repr(r.stage_mean), repr(r.boundary_mean)])


def train_step(params: Params, state: OptimState, batch: Batch, run: RunConfig) -> LossBreakdown:
    cfg, tc = run.model, run.train
    for p in params.values():
        p.grad = None
    out = model.forward(params, Tensor(batch.images), cfg)
    bt = boundary_targets(batch.boundaries, cfg.scales) if out.boundary is not None else None
    loss, parts = compute_loss(out, batch.masks, bt, tc.boundary_weight, tc.supervise_stages, tc.pos_weight)
    backward(loss)
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    sgd_step(params, grads, state)
    return parts


def train(samples: list[SaliencySample], run: RunConfig, epochs: int | None = None,
          out_dir=None, on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train from scratch. Deterministic given ``run.model.rng_seed``.

    When ``out_dir`` is set, writes ``loss.csv``, ``final.ckpt`` and, every
    ``checkpoint_every`` epochs, ``epoch_XXXX.ckpt``.
    """
    if not samples:
        raise ConfigError("no training samples")
    tc = run.train
    epochs = tc.epochs if epochs is None else epochs
    if len(samples) < tc.batch_size:
        raise ConfigError(f"need at least batch_size={tc.batch_size} samples, got {len(samples)}")
    params = model.init_params(run.model)
    state = OptimState.for_params(params, tc.learning_rate, tc.momentum, tc.weight_decay)
    rng = np.random.default_rng(run.model.rng_seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    # preprocessing is fixed, so do it once
    full = make_batch(samples, run)
    result = TrainResult(run, params, state, 0, [], rng)
    for epoch in range(epochs):
        state.learning_rate = lr_schedule(epoch, tc.learning_rate, tc.lr_step, tc.lr_decay)
        order = rng.permutation(len(samples))
        sums = np.zeros(4)
        n_seen = 0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start : start + tc.batch_size]
            batch = Batch(full.images[idx], full.masks[idx], full.boundaries[idx])
            parts = train_step(params, state, batch, run)
            k = len(idx)
            sums += k * np.array([parts.total, parts.final_saliency, parts.stage_mean, parts.boundary_mean])
            n_seen += k
        m = sums / n_seen
        row = EpochLog(epoch + 1, state.learning_rate, m[0], m[1], m[2], m[3])
        result.log.append(row)
        result.epochs_done = epoch + 1
        log.info("epoch %d lr %.3g loss %.5f", row.epoch, row.lr, row.total)
        if on_epoch is not None:
            on_epoch(row)
        if out is not None:
            write_loss_log(result.log, out / "loss.csv")
            if tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
                result.checkpoint().save(out / f"epoch_{epoch + 1:04d}.ckpt")
        if tc.plateau_stop and _plateaued([r.total for r in result.log]):
            log.info("loss plateaued after epoch %d", epoch + 1)
            break
    if out is not None:
        result.checkpoint().save(out / "final.ckpt")
    return result


def _plateaued(losses: list[float], window: int = 5, rel: float = 1e-3) -> bool:
    if len(losses) <= window:
        return False
    before = losses[-window - 1]
    return (before - losses[-1]) / max(abs(before), 1e-12) < rel


# ----------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    run: RunConfig
    params: Params
    velocity: dict[str, np.ndarray]
    epoch: int
    rng_state: dict

    @property
    def config_hash(self) -> str:
        return model_hash(self.run.model)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", VERSION))
        _put_str(buf, self.run.to_text())
        _put_str(buf, self.config_hash)
        buf.write(struct.pack("<I", self.epoch))
        _put_str(buf, json.dumps(self.rng_state, sort_keys=True))
        records = [(name, p.data) for name, p in self.params.items()]
        records += [(f"velocity:{name}", v) for name, v in self.velocity.items()]
        buf.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _put_str(buf, name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        r = _Reader(data)
        if r.take(4) != MAGIC:
            raise DecodeError("not a BFAN checkpoint", 0)
        (version,) = r.unpack("<I")
        if version != VERSION:
            raise DecodeError(f"unsupported checkpoint version {version}", 4)
        run = RunConfig.from_text(r.string())
        stored_hash = r.string()
        if stored_hash != model_hash(run.model):
            raise DecodeError("stored config hash does not match stored config", r.pos)
        (epoch,) = r.unpack("<I")
        rng_state = json.loads(r.string())
        (count,) = r.unpack("<I")
        params: Params = {}
        velocity: dict[str, np.ndarray] = {}
        for _ in range(count):
            name = r.string()
            (ndim,) = r.unpack("<I")
            shape = r.unpack(f"<{ndim}I")
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
            if name.startswith("velocity:"):
                velocity[name.split(":", 1)[1]] = arr
            else:
                params[name] = Tensor(arr, requires_grad=True)
        if r.pos != len(data):
            raise DecodeError("trailing bytes after checkpoint records", r.pos)
        return cls(run, params, velocity, epoch, rng_state)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())


def _put_str(buf: io.BytesIO, s: str) -> None:
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated checkpoint", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


# ------------------------------------------------------------------ inference

def predict_logits(params: Params, run: RunConfig, samples_or_images, batch_size: int = 8) -> model.Outputs | list:
    """Forward the network over raw RGB images ([3,H,W] uint8); returns a list of Outputs per batch."""
    cfg, tc = run.model, run.train
    images = [s.image if isinstance(s, SaliencySample) else s for s in samples_or_images]
    outs = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        x = np.stack([preprocess(im, cfg.input_size, tc.mean_bgr, tc.input_scale) for im in chunk])
        outs.append(model.forward(params, Tensor(x), cfg))
    return outs


def saliency_maps(params: Params, run: RunConfig, samples_or_images, batch_size: int = 8) -> list[np.ndarray]:
    """sigmoid(final logits) per image, [H,W] in [0,1]."""
    maps = []
    for out in predict_logits(params, run, samples_or_images, batch_size):
        prob = ops.sigmoid_array(out.preds.final.data)
        maps.extend(prob[:, 0])
    return maps


def to_gray(prob: np.ndarray) -> np.ndarray:
    return np.round(255.0 * prob).astype(np.uint8)


def infer(ckpt: Checkpoint, images: list[tuple[str, np.ndarray]], out_dir=None,
          expect: ModelConfig | None = None, dump_boundary: bool = False) -> dict[str, np.ndarray]:
    """Saliency graymaps (uint8, round(255 * sigmoid(logit))) keyed by image id.

    ``expect`` guards against running a checkpoint under the wrong
    architecture; a hash mismatch raises :class:`ConfigError`.
    """
    if expect is not None and model_hash(expect) != ckpt.config_hash:
        raise ConfigError(
            f"checkpoint config hash {ckpt.config_hash[:12]} does not match requested "
            f"config {model_hash(expect)[:12]} (ablation {ckpt.run.model.ablation.value} vs {expect.ablation.value})"
        )
    run = ckpt.run
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result: dict[str, np.ndarray] = {}
    bs = run.train.batch_size
    for start in range(0, len(images), bs):
        chunk = images[start : start + bs]
        (outputs,) = predict_logits(ckpt.params, run, [im for _, im in chunk], bs)
        probs = ops.sigmoid_array(outputs.preds.final.data)[:, 0]
        for k, (sid, _) in enumerate(chunk):
            gray = to_gray(probs[k])
            result[sid] = gray
            if out is not None:
                write_pnm(out / f"{sid}.pgm", gray)
                if dump_boundary and outputs.boundary is not None:
                    for t, bp in enumerate(outputs.boundary.predictions, 1):
                        write_pnm(out / f"{sid}_boundary{t}.pgm", to_gray(ops.sigmoid_array(bp.data[k, 0])))
    return result


# ------------------------------------------------------- FPM subset merging

def stage_maps(params: Params, run: RunConfig, samples) -> dict[int, np.ndarray]:
    """Stage logit maps for every scale the model predicts, stacked [N,H,W]."""
    acc: dict[int, list[np.ndarray]] = {}
    for out in predict_logits(params, run, samples):
        for t, m in out.preds.stages.items():
            acc.setdefault(t, []).append(m.data[:, 0])
    return {t: np.concatenate(v) for t, v in acc.items()}


def fit_merge(stages: dict[int, np.ndarray], masks: np.ndarray, subset: tuple[int, ...],
              iters: int = 30, ridge: float = 1e-6) -> tuple[np.ndarray, float]:
    """Fit a fresh 1x1 merge (weights, bias) over ``subset``'s stage logits.

    Newton iterations on the mean sigmoid cross-entropy with a tiny ridge
    term, starting from weights 1/|subset| and zero bias.
    """
    if not subset:
        raise ContractViolation("affm.final_merge", "empty FPM subset")
    k = len(subset)
    x = np.stack([stages[t].reshape(-1) for t in subset] + [np.ones(stages[subset[0]].size)], axis=1)
    y = masks.reshape(-1).astype(np.float64)
    theta = np.append(np.full(k, 1.0 / k), 0.0)
    n = len(y)
    for _ in range(iters):
        p = ops.sigmoid_array(x @ theta)
        g = x.T @ (p - y) / n + ridge * theta
        h = (x * (p * (1 - p))[:, None]).T @ x / n + ridge * np.eye(k + 1)
        step = np.linalg.solve(h, g)
        theta -= step
        if np.abs(step).max() < 1e-10:
            break
    return theta[:k], float(theta[k])


def merge_probs(stages: dict[int, np.ndarray], subset: tuple[int, ...], w: np.ndarray, b: float) -> np.ndarray:
    z = sum(w[i] * stages[t] for i, t in enumerate(subset)) + b
    return ops.sigmoid_array(np.asarray(z))
