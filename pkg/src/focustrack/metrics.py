"""Tracking metrics: success AUC, precision at 20 px, normalized precision,
state accuracy, plus the annotation/result file formats.

File conventions (annotation and result JSON) use top-left (x, y, w, h)
boxes; everything in memory is center-convention BoundingBox.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, MetricError
from .sampling import BoundingBox

SUCCESS_TAUS = tuple(round(0.05 * i, 2) for i in range(21))
NORM_PREC_TAUS = tuple(round(0.01 * i, 2) for i in range(51))


@dataclass
class SequenceAnnotation:
    boxes: list  # BoundingBox | None per frame
    exist: list  # int {0, 1} per frame

    def __post_init__(self):
        if len(self.boxes) != len(self.exist):
            raise FormatError(
                f"annotation length mismatch: {len(self.boxes)} boxes vs "
                f"{len(self.exist)} exist flags")
        for i, (b, e) in enumerate(zip(self.boxes, self.exist)):
            if (b is None) != (e == 0):
                raise FormatError(f"frame {i}: exist={e} but box is {b}")

    def __len__(self) -> int:
        return len(self.boxes)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; degenerate-vs-valid pairs give 0 by convention."""
    a_deg = a is None or a.w <= 0 or a.h <= 0
    b_deg = b is None or b.w <= 0 or b.h <= 0
    if a_deg and b_deg:
        raise ValueError("iou undefined for two degenerate boxes")
    if a_deg or b_deg:
        return 0.0
    ax1, ay1, ax2, ay2 = a.corners
    bx1, by1, bx2, by2 = b.corners
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _evaluable(pred, ann: SequenceAnnotation):
    if len(pred) != len(ann):
        raise MetricError(f"{len(pred)} predictions vs {len(ann)} annotated frames")
    pairs = [(p, b) for p, b, e in zip(pred, ann.boxes, ann.exist) if e == 1]
    if not pairs:
        raise MetricError("no evaluable frames (target never visible)")
    return pairs


def success_curve(pred, ann: SequenceAnnotation) -> tuple[tuple, list]:
    pairs = _evaluable(pred, ann)
    ious = [iou(p, b) for p, b in pairs]
    return SUCCESS_TAUS, [sum(v > tau for v in ious) / len(ious) for tau in SUCCESS_TAUS]


def success_auc(pred, ann: SequenceAnnotation) -> float:
    """Mean of the success curve over the 21-point threshold grid (strict >)."""
    _, curve = success_curve(pred, ann)
    return float(np.mean(curve))


def _center_errors(pred, ann):
    pairs = _evaluable(pred, ann)
    abs_err = [np.hypot(p.cx - b.cx, p.cy - b.cy) for p, b in pairs]
    norm_err = [np.hypot((p.cx - b.cx) / b.w, (p.cy - b.cy) / b.h) for p, b in pairs]
    return abs_err, norm_err


def precision_at(pred, ann: SequenceAnnotation, radius: float = 20.0) -> float:
    """Fraction of visible frames with center error within `radius` pixels."""
    abs_err, _ = _center_errors(pred, ann)
    return sum(e <= radius for e in abs_err) / len(abs_err)


def precision_curve(pred, ann: SequenceAnnotation, radii=None) -> tuple[list, list]:
    radii = list(radii) if radii is not None else [float(r) for r in range(0, 51)]
    abs_err, _ = _center_errors(pred, ann)
    return radii, [sum(e <= r for e in abs_err) / len(abs_err) for r in radii]


def norm_precision(pred, ann: SequenceAnnotation, threshold: float = 0.2) -> float:
    """Fraction of visible frames with per-axis size-normalized error <= threshold."""
    _, norm_err = _center_errors(pred, ann)
    return sum(e <= threshold for e in norm_err) / len(norm_err)


def norm_precision_curve_mean(pred, ann: SequenceAnnotation) -> float:
    """Curve-averaged variant over thresholds 0..0.5; the 0.2 point is canonical."""
    _, norm_err = _center_errors(pred, ann)
    return float(np.mean([sum(e <= t for e in norm_err) / len(norm_err)
                          for t in NORM_PREC_TAUS]))


def state_accuracy(pred, exist_pred, ann: SequenceAnnotation) -> float:
    """Mean of IoU on visible frames and correct-absence on invisible frames."""
    if len(pred) != len(ann) or len(exist_pred) != len(ann):
        raise MetricError("prediction/annotation length mismatch")
    if len(ann) == 0:
        raise MetricError("state accuracy undefined for an empty sequence")
    acc = 0.0
    for p, ep, b, e in zip(pred, exist_pred, ann.boxes, ann.exist):
        if e == 1:
            acc += iou(p, b)
        else:
            acc += 1.0 if ep == 0 else 0.0
    return acc / len(ann)


# -- file formats ---------------------------------------------------------------


def load_annotation(path) -> SequenceAnnotation:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from e
    if "exist" not in raw or "gt_rect" not in raw:
        raise FormatError(f"{path}: annotation needs 'exist' and 'gt_rect' keys")
    boxes = [None if r is None else BoundingBox.from_xywh(*r) for r in raw["gt_rect"]]
    return SequenceAnnotation(boxes=boxes, exist=[int(e) for e in raw["exist"]])


def save_annotation(ann: SequenceAnnotation, path) -> None:
    rects = [None if b is None else list(b.xywh) for b in ann.boxes]
    Path(path).write_text(json.dumps({"exist": ann.exist, "gt_rect": rects}))


def load_result(path) -> tuple[list, list]:
    """Read a tracker result file: boxes (center convention) and exist_pred flags."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: {e}") from e
    if "res" not in raw:
        raise FormatError(f"{path}: result needs a 'res' key")
    boxes = [BoundingBox.from_xywh(*r) for r in raw["res"]]
    exist_pred = [int(e) for e in raw.get("exist_pred", [1] * len(boxes))]
    return boxes, exist_pred


def evaluate_sequences(named_results, named_annotations) -> dict:
    """Aggregate metrics over sequences matched by name.

    named_results: {name: (boxes, exist_pred)}; named_annotations: {name: ann}.
    The annotation's first frame initializes the tracker and carries no
    prediction, so it is dropped before scoring.
    """
    common = sorted(set(named_results) & set(named_annotations))
    if not common:
        raise MetricError("no sequence names shared between results and annotations")
    per_sequence = {}
    for name in common:
        boxes, exist_pred = named_results[name]
        ann = named_annotations[name]
        if len(boxes) == len(ann) - 1:
            ann = SequenceAnnotation(boxes=ann.boxes[1:], exist=ann.exist[1:])
        per_sequence[name] = {
            "auc": success_auc(boxes, ann),
            "p20": precision_at(boxes, ann),
            "pnorm": norm_precision(boxes, ann),
            "pnorm_curve": norm_precision_curve_mean(boxes, ann),
            "sa": state_accuracy(boxes, exist_pred, ann),
        }
    keys = ("auc", "p20", "pnorm", "pnorm_curve", "sa")
    report = {k: float(np.mean([per_sequence[n][k] for n in common])) for k in keys}
    report["per_sequence"] = per_sequence
    return report
