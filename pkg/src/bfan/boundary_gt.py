"""Boundary labels from binary saliency masks via the Canny pipeline."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ContractViolation

_EIGHT = np.ones((3, 3), dtype=bool)

# (drow, dcol) step along the quantized gradient direction for bins 0/45/90/135 deg
_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def _as_binary(mask, where: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ContractViolation(where, f"mask must be 2-D, got shape {m.shape}")
    if not np.all((m == 0) | (m == 1)):
        raise ContractViolation(where, "mask must be binary {0,1}")
    return m.astype(bool)


def gradient(img: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-smoothed Sobel gradients (d/drow, d/dcol), replicate borders."""
    smooth = ndimage.gaussian_filter(img.astype(np.float64), sigma, mode="nearest")
    gy = ndimage.sobel(smooth, axis=0, mode="nearest")
    gx = ndimage.sobel(smooth, axis=1, mode="nearest")
    return gy, gx


def non_max_suppression(mag: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Keep pixels that are maxima along their 4-way quantized gradient direction.

    A pixel must beat its backward neighbour strictly and at least tie its
    forward one, so a symmetric step edge yields a one-pixel-wide line.
    """
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bins = (np.floor((angle + 22.5) / 45.0).astype(int)) % 4
    padded = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    keep = np.zeros(mag.shape, dtype=bool)
    for b, (dr, dc) in enumerate(_STEPS):
        fwd = padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]
        bwd = padded[1 - dr : 1 - dr + h, 1 - dc : 1 - dc + w]
        sel = bins == b
        keep |= sel & (mag > bwd) & (mag >= fwd)
    return keep


def hysteresis(mag: np.ndarray, candidates: np.ndarray, low: float, high: float) -> np.ndarray:
    weak = candidates & (mag >= low)
    strong = candidates & (mag >= high)
    labels, count = ndimage.label(weak, structure=_EIGHT)
    if count == 0:
        return np.zeros(mag.shape, dtype=bool)
    good = np.zeros(count + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    return good[labels]


def canny_boundary(mask, sigma: float = 1.0, low: float = 0.1, high: float = 0.3) -> np.ndarray:
    """Edge pixels of a binary mask as a uint8 {0,1} array.

    Thresholds apply to the gradient magnitude divided by its maximum over
    the image.
    """
    m = _as_binary(mask, "boundary-gt.canny_boundary")
    if sigma <= 0:
        raise ContractViolation("boundary-gt.canny_boundary", "sigma must be positive")
    if not 0 < low < high <= 1:
        raise ContractViolation("boundary-gt.canny_boundary", "need 0 < low < high <= 1")
    gy, gx = gradient(m, sigma)
    mag = np.hypot(gy, gx)
    peak = mag.max()
    if peak < 1e-12:
        return np.zeros(m.shape, dtype=np.uint8)
    mag = mag / peak
    # on a binary mask a true edge sits between two differing pixels; smoothing
    # can push NMS ridges further out where thin structures crowd together
    near_step = dilate(morph_boundary_oracle(m), 1)
    candidates = non_max_suppression(mag, gy, gx) & near_step
    edges = hysteresis(mag, candidates, low, high)
    return edges.astype(np.uint8)


def morph_boundary_oracle(mask) -> np.ndarray:
    """Mask minus its 3x3 erosion (image border treated as replicated)."""
    m = _as_binary(mask, "boundary-gt.morph_boundary_oracle")
    eroded = ndimage.binary_erosion(m, structure=_EIGHT, border_value=1)
    return (m & ~eroded).astype(np.uint8)


def dilate(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Chebyshev-radius dilation."""
    if radius == 0:
        return np.asarray(mask, dtype=bool)
    return ndimage.binary_dilation(np.asarray(mask, dtype=bool), structure=_EIGHT, iterations=radius)


def edge_agreement(pred: np.ndarray, ref: np.ndarray, tol: int = 1) -> tuple[int, int, int, int]:
    """Counts for tolerant edge matching.

    Returns (pred pixels near ref, pred pixels, ref pixels near pred, ref pixels).
    """
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    near_ref = dilate(ref, tol)
    near_pred = dilate(pred, tol)
    return (int((pred & near_ref).sum()), int(pred.sum()),
            int((ref & near_pred).sum()), int(ref.sum()))
