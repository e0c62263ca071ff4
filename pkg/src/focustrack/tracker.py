"""Per-sequence tracking orchestration.

Each frame: crop around the last predicted center with the live search factor,
run the network, optionally refine scores with the fused mask, decode the peak
(with the center-prior window only while the factor sits at its base value),
map the box back to image coordinates, then update the factor state machine.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sra as sra_mod
from .atm import upsample_mask
from .bbox_head import decode
from .config import RunConfig
from .model import FocusTrackModel
from .sampling import (BoundingBox, crop_side, extract_region, from_crop, hanning2d,
                       to_crop)
from .sra import SraState
from .synthdata import Sequence, replicate_channels
from .tensor import Tensor, no_grad


@dataclass
class TrackerState:
    template_tokens: Tensor      # frozen after init
    last_box: BoundingBox        # image coordinates
    sra: SraState
    frame_index: int


@dataclass
class FrameOutput:
    frame_index: int
    box: BoundingBox             # image coordinates
    logits: float                # presence probability
    p_max: float                 # raw peak classification score
    factor: float                # factor used for this frame's crop
    window_used: bool
    exist_pred: int
    mask: np.ndarray | None      # crop-resolution pixel mask, if masks are on
    ms: float                    # wall time, reporting only


class Tracker:
    """Shared read-only model + config; per-sequence state stays external."""

    def __init__(self, model: FocusTrackModel, cfg: RunConfig):
        self.model = model
        self.cfg = cfg
        self._window = hanning2d(model.cfg.encoder.grid)

    def init(self, frame: np.ndarray, gt_box: BoundingBox | None) -> TrackerState:
        if gt_box is None:
            raise ValueError("tracker init requires a visible target box")
        enc_cfg = self.model.cfg.encoder
        side = crop_side(gt_box, self.cfg.template_factor)
        with no_grad():
            patch, _ = extract_region(frame, (gt_box.cx, gt_box.cy), side,
                                      enc_cfg.template_side)
            tokens = self.model.embed(replicate_channels(patch, enc_cfg.in_channels))
        return TrackerState(template_tokens=tokens, last_box=gt_box,
                            sra=self.cfg.sra_state(), frame_index=0)

    def step(self, state: TrackerState, frame: np.ndarray) -> tuple[TrackerState, FrameOutput]:
        t0 = time.perf_counter()
        cfg = self.cfg
        enc_cfg = self.model.cfg.encoder
        out_side = enc_cfg.search_side
        factor = state.sra.f

        side = crop_side(state.last_box, factor)
        patch, transform = extract_region(
            frame, (state.last_box.cx, state.last_box.cy), side, out_side)
        with no_grad():
            out = self.model.forward(state.template_tokens,
                                     replicate_channels(patch, enc_cfg.in_channels),
                                     use_atm=cfg.use_atm)
            window_used = bool(cfg.use_window and state.sra.f == state.sra.f_base)
            box_crop, p_max, _ = decode(
                out.head, out_side,
                window=self._window if window_used else None,
                refined=out.refined)
        logits = out.presence.logits
        box_img = from_crop(box_crop, transform)
        # Degenerate sizes would collapse the next crop; keep a 1 px floor.
        box_img = BoundingBox(box_img.cx, box_img.cy,
                              max(box_img.w, 1.0), max(box_img.h, 1.0))
        exist_pred = 0 if (logits < state.sra.t_logits and p_max < state.sra.t_score) else 1
        mask_px = None
        if cfg.use_atm and out.mask is not None:
            mask_px = upsample_mask(out.mask.fused, out_side)

        next_sra = sra_mod.sra_update(state.sra, logits, p_max) if cfg.use_sra else state.sra
        new_state = TrackerState(template_tokens=state.template_tokens, last_box=box_img,
                                 sra=next_sra, frame_index=state.frame_index + 1)
        result = FrameOutput(
            frame_index=state.frame_index + 1, box=box_img, logits=logits, p_max=p_max,
            factor=factor, window_used=window_used, exist_pred=exist_pred, mask=mask_px,
            ms=(time.perf_counter() - t0) * 1e3)
        return new_state, result

    def track(self, seq: Sequence) -> list[FrameOutput]:
        """Initialize on the first frame's ground truth, then step through the rest."""
        state = self.init(seq.frames[0], seq.annotation.boxes[0])
        outputs = []
        for frame in seq.frames[1:]:
            state, out = self.step(state, frame)
            outputs.append(out)
        return outputs


# -- trace and result files ---------------------------------------------------------

TRACE_COLUMNS = ("frame", "x", "y", "w", "h", "logits", "p_max", "factor",
                 "window_used", "ms")


def write_trace(path, outputs: list[FrameOutput], cfg: RunConfig) -> None:
    """CSV trace, one row per tracked frame; box written as top-left x, y, w, h.

    Wall times are written only when cfg.timing is on so that default runs are
    byte-identical for identical inputs.
    """
    with open(path, "w", newline="") as f:
        f.write(f"# config: {json.dumps(cfg.to_dict(), sort_keys=True)}\n")
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for o in outputs:
            x, y, w, h = o.box.xywh
            writer.writerow([
                o.frame_index, f"{x:.4f}", f"{y:.4f}", f"{w:.4f}", f"{h:.4f}",
                f"{o.logits:.6f}", f"{o.p_max:.6f}", f"{o.factor:g}",
                int(o.window_used), f"{o.ms:.3f}" if cfg.timing else "0.000"])


def write_result(path, outputs: list[FrameOutput], cfg: RunConfig) -> None:
    """AntiUAV-style result JSON: top-left boxes plus per-frame presence calls."""
    payload = {
        "res": [[round(v, 4) for v in o.box.xywh] for o in outputs],
        "exist_pred": [o.exist_pred for o in outputs],
        "config": cfg.to_dict(),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def read_trace(path) -> list[dict]:
    rows = []
    with open(path) as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    for row in csv.DictReader(lines):
        rows.append({k: (row[k] if k == "frame" else row[k]) for k in row})
    return rows
