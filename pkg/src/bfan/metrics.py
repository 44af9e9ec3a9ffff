"""Saliency evaluation: PR curves, F-measure, MAE, and CSV reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation

THRESHOLDS = np.arange(256)
BETA2 = 0.3


def _check_pair(s, g, where: str) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g)
    if s.shape != g.shape:
        raise ContractViolation(where, f"shape mismatch {s.shape} vs {g.shape}")
    if s.size == 0:
        raise ContractViolation(where, "empty saliency map")
    # NaN fails both comparisons
    if not (s.min() >= 0.0 and s.max() <= 1.0):
        raise ContractViolation(where, "saliency values must lie in [0, 1]")
    if g.dtype != bool:
        if not np.all((g == 0) | (g == 1)):
            raise ContractViolation(where, "ground truth must be binary")
        g = g.astype(bool)
    return s, g


def _prec_rec(tp, fp, fn):
    tp = np.asarray(tp, dtype=np.float64)
    pred = tp + fp
    pos = tp + fn
    precision = np.where(pred > 0, tp / np.where(pred > 0, pred, 1), 1.0)
    recall = np.where(pos > 0, tp / np.where(pos > 0, pos, 1), 1.0)
    return precision, recall


def pr_curve(s, g) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at each threshold t = 0..255 (predicted: 255*s > t).

    Conventions: precision is 1 when nothing is predicted, recall is 1 when
    the ground truth is empty.
    """
    s, g = _check_pair(s, g, "metrics.pr_curve")
    v = (s * 255.0).ravel()
    gf = g.ravel()
    # count values strictly above each threshold via sorted lookups
    fg = np.sort(v[gf])
    bg = np.sort(v[~gf])
    tp = fg.size - np.searchsorted(fg, THRESHOLDS, side="right")
    fp = bg.size - np.searchsorted(bg, THRESHOLDS, side="right")
    fn = fg.size - tp
    return _prec_rec(tp, fp, fn)


def f_measure(precision, recall, beta2: float = BETA2):
    """(1 + b2) P R / (b2 P + R); 0 where the denominator vanishes. Vectorized."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    den = beta2 * p + r
    num = (1.0 + beta2) * p * r
    out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def mae(s, g) -> float:
    s, g = _check_pair(s, g, "metrics.mae")
    return float(np.abs(s - g).mean())


def adaptive_threshold(s) -> float:
    return min(2.0 * float(np.mean(s)), 1.0)


def adaptive_f(s, g, beta2: float = BETA2) -> float:
    """F-measure after binarizing at min(2 * mean(s), 1) with ``s >= t``.

    Zero-valued pixels never count as foreground, so an all-zero map predicts
    nothing (F = 0) instead of everything.
    """
    s, g = _check_pair(s, g, "metrics.adaptive_f")
    pred = (s >= adaptive_threshold(s)) & (s > 0)
    tp = int((pred & g).sum())
    p, r = _prec_rec(tp, int(pred.sum()) - tp, int(g.sum()) - tp)
    return f_measure(float(p), float(r), beta2)


@dataclass
class ImageScore:
    id: str
    f_beta: float
    mae: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)


@dataclass
class EvalReport:
    images: list[ImageScore]

    @property
    def mean_f(self) -> float:
        return float(np.mean([im.f_beta for im in self.images]))

    @property
    def mean_mae(self) -> float:
        return float(np.mean([im.mae for im in self.images]))

    def pr(self) -> tuple[np.ndarray, np.ndarray]:
        """Dataset PR curve: per-threshold means over images."""
        p = np.zeros(256)
        r = np.zeros(256)
        for im in self.images:  # fixed index order keeps sums reproducible
            p += im.precision
            r += im.recall
        return p / len(self.images), r / len(self.images)

    @property
    def max_f(self) -> float:
        p, r = self.pr()
        return float(np.max(f_measure(p, r)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "f_beta", "mae"])
            for im in self.images:
                w.writerow([im.id, f"{im.f_beta:.6f}", f"{im.mae:.6f}"])
            w.writerow(["__mean__", f"{self.mean_f:.6f}", f"{self.mean_mae:.6f}"])
            w.writerow(["__max_f__", f"{self.max_f:.6f}", ""])

    def write_pr_csv(self, path) -> None:
        p, r = self.pr()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall", "f_beta"])
            for t in range(256):
                w.writerow([t, f"{p[t]:.6f}", f"{r[t]:.6f}", f"{f_measure(p[t], r[t]):.6f}"])


def score_image(sid: str, s, g) -> ImageScore:
    p, r = pr_curve(s, g)
    return ImageScore(sid, adaptive_f(s, g), mae(s, g), p, r)


def evaluate(pairs) -> EvalReport:
    """``pairs``: iterable of (id, saliency in [0,1], binary gt)."""
    images = [score_image(sid, s, g) for sid, s, g in pairs]
    if not images:
        raise ContractViolation("metrics.evaluate", "no images to evaluate")
    return EvalReport(images)


def evaluate_dirs(pred_dir, gt_dir) -> EvalReport:
    """Match ``*.pgm`` predictions to ground-truth graymaps by file stem."""
    from .data import mask_from_gray, read_pnm

    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.pgm"))}
    pairs = []
    for pp in sorted(pred_dir.glob("*.pgm")):
        if pp.stem not in gts:
            continue
        s = read_pnm(pp).astype(np.float64) / 255.0
        g = mask_from_gray(read_pnm(gts[pp.stem]))
        pairs.append((pp.stem, s, g))
    return evaluate(pairs)
