"""Crop-and-resize sampling geometry.

Conventions, fixed once for the whole package:
  - continuous image coordinates, pixel i covering [i, i+1), center i + 0.5;
  - boxes are (cx, cy, w, h) in those coordinates ("absent" is plain None);
  - resampling follows half-pixel centers: src = origin + (dst + 0.5) / scale - 0.5
    in pixel-center space, bilinear taps outside the frame contribute zero;
  - box <-> crop mapping is the pure affine (translate by crop origin, scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, center convention, image or crop pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(x + w / 2, y + h / 2, w, h)

    @property
    def xywh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)


@dataclass(frozen=True)
class CropTransform:
    """Affine map between image pixels and a square resized crop."""

    cx: float
    cy: float
    side: int
    out_side: int
    pad_mask: np.ndarray  # (out, out) bool, True where source pixels existed

    @property
    def scale(self) -> float:
        return self.out_side / self.side

    @property
    def origin(self) -> tuple[float, float]:
        return (self.cx - self.side / 2.0, self.cy - self.side / 2.0)


def crop_side(box: BoundingBox | None, factor: float) -> int:
    """Square crop side ceil(factor * sqrt(w*h)), at least 1 pixel."""
    if box is None:
        raise ValueError("cannot derive a crop from an absent box")
    if factor <= 0:
        raise ValueError(f"search factor must be positive, got {factor}")
    return max(1, math.ceil(factor * math.sqrt(box.w * box.h)))


def _sample_bilinear_padded(frame: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear values at continuous coords; taps outside the frame read as 0."""
    h, w = frame.shape
    u = xs - 0.5
    v = ys - 0.5
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0

    def tap(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = frame[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return np.where(valid, vals, 0.0)

    return ((1 - fy) * (1 - fx) * tap(y0, x0)
            + (1 - fy) * fx * tap(y0, x0 + 1)
            + fy * (1 - fx) * tap(y0 + 1, x0)
            + fy * fx * tap(y0 + 1, x0 + 1))


def extract_region(frame: np.ndarray, center: tuple[float, float], side: int,
                   out_side: int) -> tuple[np.ndarray, CropTransform]:
    """Sample a square window of `side` px around `center`, resized to `out_side`.

    Out-of-frame area reads as zero; the returned pad mask is True where the
    sampling point fell inside the frame's interpolation domain.
    """
    if frame.ndim != 2 or frame.size == 0:
        raise ValueError(f"frame must be a nonempty 2-d array, got shape {frame.shape}")
    if side < 1 or out_side < 1:
        raise ValueError(f"sides must be >= 1, got side={side} out_side={out_side}")
    h, w = frame.shape
    cx, cy = float(center[0]), float(center[1])
    step = side / out_side
    xs = (cx - side / 2.0) + (np.arange(out_side, dtype=np.float64) + 0.5) * step
    ys = (cy - side / 2.0) + (np.arange(out_side, dtype=np.float64) + 0.5) * step
    patch = _sample_bilinear_padded(frame, xs[None, :], ys[:, None])
    in_x = (xs - 0.5 >= 0.0) & (xs - 0.5 <= w - 1.0)
    in_y = (ys - 0.5 >= 0.0) & (ys - 0.5 <= h - 1.0)
    mask = in_y[:, None] & in_x[None, :]
    return patch, CropTransform(cx, cy, int(side), int(out_side), mask)


def to_crop(box: BoundingBox | None, t: CropTransform) -> BoundingBox | None:
    if box is None:
        return None
    ox, oy = t.origin
    s = t.scale
    return BoundingBox((box.cx - ox) * s, (box.cy - oy) * s, box.w * s, box.h * s)


def from_crop(box: BoundingBox | None, t: CropTransform) -> BoundingBox | None:
    if box is None:
        return None
    ox, oy = t.origin
    s = t.scale
    return BoundingBox(box.cx / s + ox, box.cy / s + oy, box.w / s, box.h / s)


def hanning2d(n: int) -> np.ndarray:
    """Outer product of 1-d Hann windows; n=1 degenerates to [[1]]."""
    if n < 1:
        raise ConfigError(f"window size must be >= 1, got {n}")
    w = np.hanning(n)
    return np.outer(w, w)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resize with edge clamping (no padding)."""
    h, w = img.shape
    u = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    v = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (u - x0)[None, :]
    fy = (v - y0)[:, None]
    return ((1 - fy) * (1 - fx) * img[y0[:, None], x0[None, :]]
            + (1 - fy) * fx * img[y0[:, None], x1[None, :]]
            + fy * (1 - fx) * img[y1[:, None], x0[None, :]]
            + fy * fx * img[y1[:, None], x1[None, :]])
