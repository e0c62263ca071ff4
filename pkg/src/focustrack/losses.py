"""Training objectives: focal classification, L1 + GIoU regression, presence
cross-entropy, mask focal loss, and their weighted sum.

Differentiable paths take graph Tensors; the BoundingBox overloads are thin
wrappers for plain-float evaluation (metrics, tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .sampling import BoundingBox
from .sra import PresenceOutput
from .tensor import Tensor

EPS_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    giou: float = 2.0
    l1: float = 5.0
    focal: float = 1.0
    logits: float = 1.0
    mask: float = 1.0


@dataclass
class LossParts:
    l_focal: float = 0.0
    l_l1: float = 0.0
    l_giou: float = 0.0
    l_logits: float = 0.0
    l_mask: float = 0.0
    total: float = 0.0


def _box_tensor(box: BoundingBox, dtype=np.float64) -> Tensor:
    return Tensor(np.array([box.cx, box.cy, box.w, box.h], dtype=dtype))


def giou_tensor(pred: Tensor, gt: Tensor) -> Tensor:
    """Generalized IoU of two (cx, cy, w, h) boxes; differentiable, in (-1, 1]."""
    if float(pred.data[2]) <= 0 or float(pred.data[3]) <= 0 \
            or float(gt.data[2]) <= 0 or float(gt.data[3]) <= 0:
        raise ValueError("giou requires boxes with positive extents")
    ax1, ay1 = pred[0] - pred[2] * 0.5, pred[1] - pred[3] * 0.5
    ax2, ay2 = pred[0] + pred[2] * 0.5, pred[1] + pred[3] * 0.5
    bx1, by1 = gt[0] - gt[2] * 0.5, gt[1] - gt[3] * 0.5
    bx2, by2 = gt[0] + gt[2] * 0.5, gt[1] + gt[3] * 0.5
    iw = T.relu(T.minimum(ax2, bx2) - T.maximum(ax1, bx1))
    ih = T.relu(T.minimum(ay2, by2) - T.maximum(ay1, by1))
    inter = iw * ih
    union = pred[2] * pred[3] + gt[2] * gt[3] - inter
    hull = (T.maximum(ax2, bx2) - T.minimum(ax1, bx1)) \
        * (T.maximum(ay2, by2) - T.minimum(ay1, by1))
    return inter / union - (hull - union) / hull


def giou(a: BoundingBox, b: BoundingBox) -> float:
    return giou_tensor(_box_tensor(a), _box_tensor(b)).item()


def giou_loss(pred: Tensor, gt: Tensor) -> Tensor:
    return 1.0 - giou_tensor(pred, gt)


def l1_box_tensor(pred: Tensor, gt: Tensor, norm_side: float) -> Tensor:
    if norm_side <= 0:
        raise ValueError(f"norm_side must be positive, got {norm_side}")
    return T.tmean(T.tabs(pred - gt) * (1.0 / norm_side))


def l1_box(pred: BoundingBox, gt: BoundingBox, norm_side: float) -> float:
    return l1_box_tensor(_box_tensor(pred), _box_tensor(gt), norm_side).item()


def gaussian_radius(wh_cells: tuple[float, float], min_overlap: float = 0.7) -> float:
    """Neighborhood radius (grid cells) keeping IoU >= min_overlap, CenterNet style."""
    h, w = wh_cells
    a1 = 1.0
    b1 = h + w
    c1 = w * h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(max(b1 ** 2 - 4 * a1 * c1, 0.0))) / 2
    a2 = 4.0
    b2 = 2 * (h + w)
    c2 = (1 - min_overlap) * w * h
    r2 = (b2 - math.sqrt(max(b2 ** 2 - 4 * a2 * c2, 0.0))) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (h + w)
    c3 = (min_overlap - 1) * w * h
    r3 = (-b3 + math.sqrt(max(b3 ** 2 - 4 * a3 * c3, 0.0))) / (2 * a3)
    return max(0.0, min(r1, r2, r3))


def make_target_heatmap(box_crop: BoundingBox | None, grid: int, stride: float) -> np.ndarray:
    """One hot cell at the box center with a Gaussian penalty-reduction skirt.

    Absent box gives the all-zero map used for negative pairs.
    """
    hm = np.zeros((grid, grid), dtype=np.float64)
    if box_crop is None:
        return hm
    cj = int(np.clip(box_crop.cx / stride, 0, grid - 1))
    ci = int(np.clip(box_crop.cy / stride, 0, grid - 1))
    radius = gaussian_radius((box_crop.h / stride, box_crop.w / stride))
    sigma = max((2 * radius + 1) / 6.0, 1e-3)
    ii, jj = np.mgrid[0:grid, 0:grid]
    hm = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * sigma ** 2))
    hm[hm < 1e-4] = 0.0
    hm[ci, cj] = 1.0
    return hm


def make_target_mask(box_crop: BoundingBox | None, grid: int, stride: float) -> np.ndarray:
    """Rectangular pseudo-mask at grid resolution.

    A cell lights up when the box covers at least half of it; the cell under
    the box center always lights so tiny targets keep a nonempty mask.
    Absent box gives the all-zero mask.
    """
    m = np.zeros((grid, grid), dtype=np.float64)
    if box_crop is None:
        return m
    x1, y1, x2, y2 = box_crop.corners
    for i in range(grid):
        for j in range(grid):
            ix = max(0.0, min(x2, (j + 1) * stride) - max(x1, j * stride))
            iy = max(0.0, min(y2, (i + 1) * stride) - max(y1, i * stride))
            if ix * iy >= 0.5 * stride * stride:
                m[i, j] = 1.0
    cj = int(np.clip(box_crop.cx / stride, 0, grid - 1))
    ci = int(np.clip(box_crop.cy / stride, 0, grid - 1))
    m[ci, cj] = 1.0
    return m


def focal_heatmap(score: Tensor, gt_heatmap: np.ndarray, alpha: float = 2.0,
                  beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss against a Gaussian-skirted heatmap.

    All-zero ground truth (negative pair) contributes nothing.
    """
    if score.shape != gt_heatmap.shape:
        raise ShapeError(f"score {score.shape} != heatmap {gt_heatmap.shape}")
    pos = (gt_heatmap == 1.0).astype(score.dtype.type)
    n_pos = float(pos.sum())
    if n_pos == 0:
        return Tensor(np.zeros((), dtype=score.dtype))
    p = T.clamp(score, EPS_CLAMP, 1.0 - EPS_CLAMP)
    pos_term = ((1.0 - p) ** alpha) * T.log(p) * pos
    neg_term = (Tensor((1.0 - gt_heatmap) ** beta) * (p ** alpha)
                * T.log(1.0 - p) * (1.0 - pos))
    return -(T.tsum(pos_term) + T.tsum(neg_term)) * (1.0 / n_pos)


def focal_mask(pred_mask: Tensor, gt_mask: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Pixelwise binary focal loss, mean over pixels; gt is {0, 1}."""
    if pred_mask.shape != gt_mask.shape:
        raise ShapeError(f"mask {pred_mask.shape} != gt {gt_mask.shape}")
    p = T.clamp(pred_mask, EPS_CLAMP, 1.0 - EPS_CLAMP)
    gt = gt_mask.astype(pred_mask.dtype.type)
    pos = -alpha * ((1.0 - p) ** gamma) * T.log(p) * gt
    neg = -(1.0 - alpha) * (p ** gamma) * T.log(1.0 - p) * (1.0 - gt)
    return T.tmean(pos + neg)


def dice_loss(pred_mask: Tensor, gt_mask: np.ndarray, smooth: float = 1.0) -> Tensor:
    """Soft Dice; kept as a comparison harness, not a supported training path."""
    inter = T.tsum(pred_mask * gt_mask)
    total = T.tsum(pred_mask) + float(gt_mask.sum())
    return 1.0 - (2.0 * inter + smooth) / (total + smooth)


def ce_presence(probs: PresenceOutput | Tensor, label: int) -> Tensor:
    """Cross-entropy on the (present, absent) vector; label 1 means present."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    t = probs.tensor if isinstance(probs, PresenceOutput) else probs
    flat = T.reshape(t, (2,))
    idx = 0 if label == 1 else 1
    return -T.log(T.clamp(flat[idx], EPS_CLAMP, 1.0))


def total_loss(l_focal, l_l1, l_giou, l_logits, l_mask, weights: LossWeights = LossWeights()):
    """Weighted objective; works on floats and graph Tensors alike."""
    return (weights.giou * l_giou + weights.l1 * l_l1 + weights.focal * l_focal
            + weights.logits * l_logits + weights.mask * l_mask)
