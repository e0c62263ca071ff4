"""Center-style box estimation head.

Three convolutional branches over the spatial search feature map produce a
classification score map, a sub-cell offset map and a normalized size map;
the peak cell is decoded into a box in crop pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .rng import Rng
from .sampling import BoundingBox
from .tensor import GradientTape, Tensor

BRANCHES = ("score", "offset", "size")
_OUT_CHANNELS = {"score": 1, "offset": 2, "size": 2}


@dataclass
class HeadOutput:
    score: Tensor   # (G, G) in [0, 1]
    offset: Tensor  # (2, G, G) in (0, 1), channel 0 = x, channel 1 = y
    size: Tensor    # (2, G, G) in (0, 1), channel 0 = w, channel 1 = h

    @property
    def grid(self) -> int:
        return self.score.shape[-1]


def init_head_params(tape: GradientTape, dim: int, rng: Rng, stages: int = 3) -> None:
    for branch in BRANCHES:
        c = dim
        for i in range(1, stages + 1):
            nxt = max(1, c // 2)
            tape.param(f"head.{branch}.conv{i}.w", (nxt, c, 3, 3), rng=rng)
            tape.param(f"head.{branch}.conv{i}.b", (nxt,), init="zeros")
            c = nxt
        tape.param(f"head.{branch}.proj.w", (_OUT_CHANNELS[branch], c), rng=rng)
        tape.param(f"head.{branch}.proj.b", (_OUT_CHANNELS[branch],), init="zeros")


def head_forward(search_map: Tensor, params: GradientTape, stages: int = 3) -> HeadOutput:
    """search_map: (C, G, G) spatial rearrangement of the search tokens."""
    if search_map.ndim != 3 or search_map.shape[1] != search_map.shape[2]:
        raise ShapeError(f"expected (C, G, G) search map, got {search_map.shape}")
    outs = {}
    for branch in BRANCHES:
        x = search_map
        for i in range(1, stages + 1):
            x = T.relu(T.conv3x3(x, params[f"head.{branch}.conv{i}.w"],
                                 params[f"head.{branch}.conv{i}.b"]))
        x = T.conv1x1(x, params[f"head.{branch}.proj.w"], params[f"head.{branch}.proj.b"])
        outs[branch] = T.sigmoid(x)
    g = search_map.shape[1]
    return HeadOutput(score=T.reshape(outs["score"], (g, g)),
                      offset=outs["offset"], size=outs["size"])


def decode(head: HeadOutput, out_side: int, window: np.ndarray | None = None,
           refined: Tensor | np.ndarray | None = None) -> tuple[BoundingBox, float, tuple[int, int]]:
    """Pick the peak cell and decode it to a box in crop pixels.

    Selection runs on `refined` when given (mask-refined scores), multiplied by
    `window` when given; the returned p_max is always the raw head score at the
    selected cell so downstream confidence tests see an unbiased value.
    Ties resolve to the first cell in row-major order.
    """
    g = head.grid
    raw = head.score.data
    sel = refined.data if isinstance(refined, Tensor) else (
        np.asarray(refined) if refined is not None else raw)
    if sel.shape != (g, g):
        raise ShapeError(f"selection map {sel.shape} != ({g}, {g})")
    if window is not None:
        if window.shape != (g, g):
            raise ShapeError(f"window {window.shape} != score map ({g}, {g})")
        sel = sel * window
    flat = int(np.argmax(sel))
    i, j = divmod(flat, g)
    p_max = float(raw[i, j])
    stride = out_side / g
    cx = (j + float(head.offset.data[0, i, j])) * stride
    cy = (i + float(head.offset.data[1, i, j])) * stride
    w = float(head.size.data[0, i, j]) * out_side
    h = float(head.size.data[1, i, j]) * out_side
    return BoundingBox(cx, cy, w, h), p_max, (i, j)


def tokens_to_map(search_out: Tensor, grid: int) -> Tensor:
    """(N_x, C) row-major tokens -> (C, G, G) spatial map."""
    n, c = search_out.shape
    if n != grid * grid:
        raise ShapeError(f"{n} tokens do not tile a {grid}x{grid} grid")
    return T.transpose(T.reshape(search_out, (grid, grid, c)), (2, 0, 1))
