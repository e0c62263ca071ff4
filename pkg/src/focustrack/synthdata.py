"""Synthetic thermal-style sequences: a small bright Gaussian target wandering
over low-frequency clutter, with scripted whole-scene jumps standing in for
abrupt camera motion, plus PNG/JSON sequence I/O.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .metrics import SequenceAnnotation, load_annotation, save_annotation
from .rng import Rng
from .sampling import BoundingBox, bilinear_resize


@dataclass(frozen=True)
class SynthSpec:
    frame_side: int = 112
    frames: int = 45
    size_min: float = 8.0
    size_max: float = 14.0
    walk_std: float = 0.8
    jumps: tuple = ()          # (frame_index, dx, dy) scene shifts, in pixels
    clutter: float = 0.3       # amplitude of the low-frequency background field
    clutter_cells: int = 6     # coarse noise cells across one frame side
    distractors: int = 3       # dim static blobs competing with the target
    distractor_peak: float = 0.45
    noise_std: float = 0.02
    target_peak: float = 0.6
    base_level: float = 0.25
    occlusions: tuple = ()     # (start, end) half-open frame ranges with no target
    seed: int = 0

    def __post_init__(self):
        if self.size_min < 2:
            raise ValueError(f"target size must be >= 2 px, got {self.size_min}")
        for f, _, _ in self.jumps:
            if not (0 < f < self.frames):
                raise ValueError(f"jump frame {f} outside 1..{self.frames - 1}")

    def to_json(self) -> str:
        d = asdict(self)
        d["jumps"] = [list(j) for j in self.jumps]
        d["occlusions"] = [list(o) for o in self.occlusions]
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        d = json.loads(text)
        d["jumps"] = tuple(tuple(j) for j in d.get("jumps", ()))
        d["occlusions"] = tuple(tuple(o) for o in d.get("occlusions", ()))
        return cls(**d)


@dataclass
class Sequence:
    name: str
    frames: list                 # (H, W) float arrays in [0, 1]
    annotation: SequenceAnnotation
    spec: SynthSpec | None = None


def escape_jump_bound(target_size: float, factor: float) -> float:
    """Smallest displacement that puts the target center outside a crop of the
    given factor centered on its previous position: factor * size / 2."""
    return factor * target_size / 2.0


def _value_noise(rng: Rng, world: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(cells * cells).reshape(cells, cells)
    return bilinear_resize(coarse, world, world)


def generate(spec: SynthSpec, name: str | None = None) -> Sequence:
    """Render one sequence; everything derives from spec.seed."""
    rng = Rng(spec.seed)
    side = spec.frame_side

    # World canvas large enough for the frame plus all camera shifts.
    cum = np.cumsum([[dx, dy] for _, dx, dy in spec.jumps], axis=0) if spec.jumps \
        else np.zeros((1, 2))
    margin = int(np.ceil(np.abs(cum).max())) + 8
    world = side + 2 * margin

    yy, xx = np.mgrid[0:world, 0:world]
    bg_rng = rng.spawn(1)
    cells = max(2, round(spec.clutter_cells * world / side))
    field_img = spec.base_level + spec.clutter * (_value_noise(bg_rng, world, cells) - 0.5)
    for _ in range(spec.distractors):
        bx = bg_rng.uniform_scalar(margin, world - margin)
        by = bg_rng.uniform_scalar(margin, world - margin)
        bs = bg_rng.uniform_scalar(spec.size_min, spec.size_max)
        blob = np.exp(-(((xx + 0.5) - bx) ** 2 + ((yy + 0.5) - by) ** 2) / (2 * (bs / 4) ** 2))
        field_img = field_img + spec.distractor_peak * bg_rng.uniform_scalar(0.5, 1.0) * blob

    size = rng.spawn(2).uniform_scalar(spec.size_min, spec.size_max)
    sigma = size / 4.0

    walk_rng = rng.spawn(3)
    noise_rng = rng.spawn(4)
    # Integer camera shifts keep the crop grid and the annotations exactly aligned.
    jumps = {int(f): (round(dx), round(dy)) for f, dx, dy in spec.jumps}

    # Target world position; camera offset maps world -> frame coordinates.
    cam_x, cam_y = margin, margin
    tx = cam_x + side / 2.0
    ty = cam_y + side / 2.0

    frames: list[np.ndarray] = []
    boxes: list[BoundingBox | None] = []
    exist: list[int] = []
    for t in range(spec.frames):
        if t > 0:
            step = walk_rng.normal(2) * spec.walk_std
            tx += float(step[0])
            ty += float(step[1])
        if t in jumps:
            dx, dy = jumps[t]
            cam_x -= dx
            cam_y -= dy
        # Keep the target inside the visible frame with a small border.
        lo, hi = size, side - size
        tx = float(np.clip(tx, cam_x + lo, cam_x + hi))
        ty = float(np.clip(ty, cam_y + lo, cam_y + hi))

        occluded = any(a <= t < b for a, b in spec.occlusions)
        canvas = field_img
        if not occluded:
            blob = np.exp(-(((xx + 0.5) - tx) ** 2 + ((yy + 0.5) - ty) ** 2)
                          / (2 * sigma ** 2))
            canvas = canvas + spec.target_peak * blob
        iy, ix = cam_y, cam_x
        frame = canvas[iy:iy + side, ix:ix + side]
        if spec.noise_std > 0:
            frame = frame + noise_rng.normal(side * side).reshape(side, side) * spec.noise_std
        frames.append(np.clip(frame, 0.0, 1.0))
        if occluded:
            boxes.append(None)
            exist.append(0)
        else:
            boxes.append(BoundingBox(tx - cam_x, ty - cam_y, size, size))
            exist.append(1)
    ann = SequenceAnnotation(boxes=boxes, exist=exist)
    return Sequence(name=name or f"synth{spec.seed:04d}", frames=frames,
                    annotation=ann, spec=spec)


# -- sequence I/O -----------------------------------------------------------------


def save_sequence(seq: Sequence, out_dir) -> None:
    """Write frames as zero-padded 8-bit PNGs plus annotation and spec JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, start=1):
        img = Image.fromarray(np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8))
        img.save(out / f"{i:06d}.png")
    save_annotation(seq.annotation, out / "annotations.json")
    if seq.spec is not None:
        (out / "synth_spec.json").write_text(seq.spec.to_json())


_FRAME_RE = re.compile(r"^(\d+)\.png$")


def load_sequence(seq_dir) -> Sequence:
    """Read numerically ordered grayscale PNG frames plus annotations.json."""
    d = Path(seq_dir)
    entries = []
    if d.is_dir():
        for p in d.iterdir():
            m = _FRAME_RE.match(p.name)
            if m:
                entries.append((int(m.group(1)), p))
    if not entries:
        raise FormatError(f"{d}: no numbered PNG frames found")
    entries.sort()
    frames = []
    for _, p in entries:
        arr = np.asarray(Image.open(p))
        if arr.ndim == 3:
            arr = arr[..., 0]
        if arr.dtype == np.uint8:
            frame = arr.astype(np.float64) / 255.0
        elif arr.dtype == np.uint16:
            frame = arr.astype(np.float64) / 65535.0
        else:
            raise FormatError(f"{p}: unsupported bit depth {arr.dtype}")
        frames.append(frame)
    ann_path = d / "annotations.json"
    if not ann_path.exists():
        raise FormatError(f"{ann_path}: missing annotation file")
    ann = load_annotation(ann_path)
    if len(ann) != len(frames):
        raise FormatError(
            f"{ann_path}: {len(ann)} annotated frames but {len(frames)} PNGs")
    spec = None
    spec_path = d / "synth_spec.json"
    if spec_path.exists():
        spec = SynthSpec.from_json(spec_path.read_text())
    return Sequence(name=d.name, frames=frames, annotation=ann, spec=spec)


def replicate_channels(frame: np.ndarray, channels: int) -> np.ndarray:
    """(H, W) -> (channels, H, W) by replication."""
    return np.repeat(frame[None, :, :], channels, axis=0)
