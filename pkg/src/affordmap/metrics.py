"""Saliency evaluation measures: KLD (down), SIM (up), NSS (up), plus mIoU."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DegenerateMapError, ShapeMismatchError
from .fusion import nss_score


@dataclass(frozen=True)
class MetricTriple:
    kld: float
    sim: float
    nss: float


def _as_distribution(m: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatchError(f"{name}: expected a 2-D map, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ArgumentError(f"{name}: map contains non-finite values")
    if m.min() < 0:
        raise ArgumentError(f"{name}: map must be non-negative")
    total = float(m.sum())
    if total <= 0.0:
        raise DegenerateMapError(f"{name}: map sums to zero, cannot normalize to a distribution")
    return m / total


def _paired(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = _as_distribution(pred, "pred")
    q = _as_distribution(gt, "gt")
    if p.shape != q.shape:
        raise ShapeMismatchError(f"pred shape {p.shape} != gt shape {q.shape}")
    return p, q


def kld(pred: np.ndarray, gt: np.ndarray, eps: float = 1e-10) -> float:
    """Sum-normalize both maps, then sum(Q * log(Q / (P + eps) + eps))."""
    p, q = _paired(pred, gt)
    # the inner +eps keeps the log argument positive where Q = 0; 0 * log(eps) = 0
    return float(np.sum(q * np.log(q / (p + eps) + eps)))


def sim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Histogram intersection of sum-normalized maps: sum(min(P, Q)) in [0, 1]."""
    p, q = _paired(pred, gt)
    return float(np.sum(np.minimum(p, q)))


def nss_eval(pred: np.ndarray, gt: np.ndarray, fixation_threshold: float = 0.5) -> float:
    """NSS against fixations synthesized by thresholding gt at fixation_threshold * max."""
    if not 0.0 < fixation_threshold <= 1.0:
        raise ArgumentError(f"fixation_threshold must lie in (0, 1], got {fixation_threshold}")
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.ndim != 2 or pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred shape {pred.shape} incompatible with gt shape {gt.shape}")
    if not np.isfinite(gt).all():
        raise ArgumentError("gt: map contains non-finite values")
    if gt.min() < 0:
        raise ArgumentError("gt: map must be non-negative")
    peak = float(gt.max())
    if peak <= 0.0:
        raise DegenerateMapError("gt has no positive values; no fixations to evaluate")
    return nss_score(pred, gt >= fixation_threshold * peak)


def miou(pred_mask: np.ndarray, gt_mask: np.ndarray, num_classes: int) -> float:
    """Mean IoU over the classes present in gt (absent classes do not dilute)."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ShapeMismatchError(f"pred shape {pred_mask.shape} != gt shape {gt_mask.shape}")
    if num_classes < 1:
        raise ArgumentError(f"num_classes must be >= 1, got {num_classes}")
    for name, mask in (("pred", pred_mask), ("gt", gt_mask)):
        if not np.issubdtype(mask.dtype, np.integer):
            raise ArgumentError(f"{name}: label map must be integer-typed, got {mask.dtype}")
        if mask.min() < 0 or mask.max() >= num_classes:
            raise ArgumentError(
                f"{name}: labels must lie in [0, {num_classes}), got range "
                f"[{mask.min()}, {mask.max()}]"
            )
    ious = []
    for cls in np.unique(gt_mask):
        p = pred_mask == cls
        g = gt_mask == cls
        union = int(np.logical_or(p, g).sum())
        inter = int(np.logical_and(p, g).sum())
        ious.append(inter / union)  # union > 0: cls is present in gt
    return float(np.mean(ious))
