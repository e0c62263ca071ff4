"""Toy-scale training: contrastive pair sampling, crop assembly, the weighted
objective, Adam updates with separate backbone/auxiliary learning rates, and
the gradient-verification entry point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import tensor as T
from .config import RunConfig
from .errors import ConfigError, DivergenceError, SamplingError
from .losses import LossParts
from .model import FocusTrackModel
from .rng import Rng
from .sampling import BoundingBox, crop_side, extract_region, to_crop
from .sra import PairSample, sample_pairs
from .synthdata import Sequence, replicate_channels
from .tensor import GradientTape, Tensor, grad_check

BACKBONE_PREFIXES = ("patch_embed.", "cls.", "pos.", "id.", "blk")
AUX_PREFIXES = ("head.", "sra.", "atm.")


@dataclass
class PreparedSample:
    template_img: np.ndarray        # (ch, Hz, Wz)
    search_img: np.ndarray          # (ch, Hx, Wx)
    label: int
    gt_box_crop: BoundingBox | None  # crop coordinates, None for negatives
    heatmap: np.ndarray             # (G, G)
    mask: np.ndarray                # (G, G)
    gt_cell: tuple[int, int] | None


def _box_overlaps_window(box: BoundingBox, cx: float, cy: float, half: float) -> bool:
    x1, y1, x2, y2 = box.corners
    return not (x2 < cx - half or x1 > cx + half or y2 < cy - half or y1 > cy + half)


def prepare_pair(pair: PairSample, sequences, cfg: RunConfig, rng: Rng) -> PreparedSample:
    """Crop template and search regions and rasterize the supervision targets.

    Positive search crops jitter around the target so the head sees varied
    grid cells; negative crops land on clutter away from the foreign target.
    Augmentation: horizontal flip and brightness jitter.
    """
    model_cfg = cfg.model_config()
    enc = model_cfg.encoder
    grid, out_side = enc.grid, enc.search_side
    stride = out_side / grid

    t_seq = sequences[pair.template_seq]
    t_frame = t_seq.frames[pair.template_frame]
    t_box = pair.template_box
    t_side = crop_side(t_box, cfg.template_factor)
    t_patch, _ = extract_region(t_frame, (t_box.cx, t_box.cy), t_side, enc.template_side)

    s_seq = sequences[pair.search_seq]
    s_frame = s_seq.frames[pair.search_frame]
    if pair.label == 1:
        s_box = pair.search_box
        side = crop_side(s_box, cfg.f_base)
        j = cfg.center_jitter * math.sqrt(s_box.w * s_box.h)
        cx = s_box.cx + rng.uniform_scalar(-j, j)
        cy = s_box.cy + rng.uniform_scalar(-j, j)
    else:
        side = crop_side(t_box, cfg.f_base)
        h, w = s_frame.shape
        cx = cy = None
        for _ in range(10):
            cand_x = rng.uniform_scalar(0, w)
            cand_y = rng.uniform_scalar(0, h)
            if pair.avoid_box is None or not _box_overlaps_window(
                    pair.avoid_box, cand_x, cand_y, side / 2.0):
                cx, cy = cand_x, cand_y
                break
        if cx is None:
            # Fall back to the corner farthest from the foreign target.
            ax, ay = pair.avoid_box.cx, pair.avoid_box.cy
            cx = 0.0 if ax > w / 2 else float(w)
            cy = 0.0 if ay > h / 2 else float(h)
    patch, transform = extract_region(s_frame, (cx, cy), side, out_side)

    # Augmentations: brightness jitter on both crops, horizontal flip on search.
    t_patch = np.clip(t_patch * rng.uniform_scalar(0.8, 1.2), 0.0, 1.0)
    patch = np.clip(patch * rng.uniform_scalar(0.8, 1.2), 0.0, 1.0)
    box_crop = to_crop(pair.search_box, transform) if pair.label == 1 else None
    if rng.uniform_scalar() < 0.5:
        patch = patch[:, ::-1].copy()
        if box_crop is not None:
            box_crop = BoundingBox(out_side - box_crop.cx, box_crop.cy,
                                   box_crop.w, box_crop.h)

    heatmap = L.make_target_heatmap(box_crop, grid, stride)
    mask = L.make_target_mask(box_crop, grid, stride)
    cell = None
    if box_crop is not None:
        cell = (int(np.clip(box_crop.cy / stride, 0, grid - 1)),
                int(np.clip(box_crop.cx / stride, 0, grid - 1)))
    return PreparedSample(
        template_img=replicate_channels(t_patch, enc.in_channels),
        search_img=replicate_channels(patch, enc.in_channels),
        label=pair.label, gt_box_crop=box_crop, heatmap=heatmap, mask=mask, gt_cell=cell)


def sample_loss_terms(model: FocusTrackModel, sample: PreparedSample,
                      cfg: RunConfig) -> dict[str, Tensor]:
    """Per-sample objective terms as graph tensors (zeros where not supervised)."""
    enc = model.cfg.encoder
    out_side = enc.search_side
    grid = enc.grid
    stride = out_side / grid
    z_tokens = model.embed(sample.template_img)
    out = model.forward(z_tokens, sample.search_img, use_atm=cfg.use_atm)

    zero = Tensor(np.zeros((), dtype=model.tape.dtype))
    score = out.refined if out.refined is not None else out.head.score
    terms = {"focal": zero, "l1": zero, "giou": zero, "logits": zero, "mask": zero}
    if sample.label == 1:
        terms["focal"] = L.focal_heatmap(score, sample.heatmap,
                                         cfg.focal_alpha, cfg.focal_beta)
        i, j = sample.gt_cell
        pred_box = T.stack([
            (out.head.offset[0, i, j] + float(j)) * stride,
            (out.head.offset[1, i, j] + float(i)) * stride,
            out.head.size[0, i, j] * float(out_side),
            out.head.size[1, i, j] * float(out_side)])
        b = sample.gt_box_crop
        gt_box = Tensor(np.array([b.cx, b.cy, b.w, b.h], dtype=model.tape.dtype))
        terms["l1"] = L.l1_box_tensor(pred_box, gt_box, float(out_side))
        terms["giou"] = L.giou_loss(pred_box, gt_box)
    terms["logits"] = L.ce_presence(out.presence, sample.label)
    if cfg.use_atm and out.mask is not None:
        terms["mask"] = L.focal_mask(out.mask.fused, sample.mask,
                                     cfg.mask_focal_alpha, cfg.mask_focal_gamma)
    return terms


def batch_loss(model: FocusTrackModel, batch: list[PreparedSample],
               cfg: RunConfig) -> tuple[Tensor, LossParts]:
    """Mean objective over a batch, plus detached per-term values for logging."""
    acc = {k: [] for k in ("focal", "l1", "giou", "logits", "mask")}
    for sample in batch:
        for k, v in sample_loss_terms(model, sample, cfg).items():
            acc[k].append(v)
    mean = {k: T.tmean(T.stack(v)) for k, v in acc.items()}
    total = L.total_loss(mean["focal"], mean["l1"], mean["giou"], mean["logits"],
                         mean["mask"], cfg.loss_weights())
    parts = LossParts(l_focal=mean["focal"].item(), l_l1=mean["l1"].item(),
                      l_giou=mean["giou"].item(), l_logits=mean["logits"].item(),
                      l_mask=mean["mask"].item(), total=total.item())
    return total, parts


class Adam:
    """Adam over a name-filtered subset of the tape, one lr per name group."""

    def __init__(self, tape: GradientTape, lr_for_name, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tape = tape
        self.lr_for_name = lr_for_name
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in tape.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in tape.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.tape.items():
            lr = self.lr_for_name(name)
            if lr == 0.0 or p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)


def _lr_schedule(cfg: RunConfig, trainable_prefixes=None, atm_lr=None):
    def lr_for_name(name: str) -> float:
        if trainable_prefixes is not None and not name.startswith(trainable_prefixes):
            return 0.0
        if atm_lr is not None and name.startswith("atm."):
            return atm_lr
        if name.startswith(AUX_PREFIXES):
            return cfg.lr_heads
        return cfg.lr_backbone
    return lr_for_name


def _run_steps(model: FocusTrackModel, sequences, cfg: RunConfig, steps: int,
               positive_ratio: float, opt: Adam, rng: Rng, trace: list,
               log=None, step_offset: int = 0) -> None:
    sampler_rng = rng.spawn(101)
    crop_rng = rng.spawn(102)
    for step in range(1, steps + 1):
        pairs = sample_pairs(sequences, positive_ratio, sampler_rng, cfg.batch)
        batch = [prepare_pair(p, sequences, cfg, crop_rng) for p in pairs]
        model.tape.zero_grad()
        total, parts = batch_loss(model, batch, cfg)
        if not np.isfinite(parts.total):
            raise DivergenceError(step_offset + step)
        total.backward()
        opt.step()
        trace.append(parts)
        if log is not None:
            log(step_offset + step, parts)


def train(model: FocusTrackModel, sequences: list[Sequence], cfg: RunConfig,
          log=None) -> list[LossParts]:
    """Mini-batch descent on the weighted objective; returns the loss trace.

    Single phase trains everything on mixed pairs. Two-phase first trains the
    localization and mask paths on positives only, then trains the presence
    path (plus the mask module at the backbone rate) on mixed pairs with
    everything else frozen.
    """
    if len(sequences) < 2 and cfg.positive_ratio < 1.0:
        raise SamplingError("training with negatives needs at least two sequences")
    rng = Rng(cfg.seed)
    trace: list[LossParts] = []
    if cfg.phase == "single":
        opt = Adam(model.tape, _lr_schedule(cfg))
        _run_steps(model, sequences, cfg, cfg.steps, cfg.positive_ratio, opt, rng,
                   trace, log)
    else:
        opt1 = Adam(model.tape, _lr_schedule(cfg))
        _run_steps(model, sequences, cfg, cfg.steps, 1.0, opt1, rng, trace, log)
        frozen = _lr_schedule(cfg, trainable_prefixes=("sra.", "atm."),
                              atm_lr=cfg.lr_backbone)
        opt2 = Adam(model.tape, frozen)
        _run_steps(model, sequences, cfg, cfg.phase2_steps, cfg.positive_ratio, opt2,
                   rng.spawn(7), trace, log, step_offset=cfg.steps)
    return trace


def presence_accuracy(model: FocusTrackModel, sequences, cfg: RunConfig,
                      n_pairs: int = 200, seed: int = 99) -> float:
    """Fraction of held-out pairs whose presence call matches the label."""
    rng = Rng(seed)
    pairs = sample_pairs(sequences, cfg.positive_ratio, rng.spawn(1), n_pairs)
    crop_rng = rng.spawn(2)
    correct = 0
    with T.no_grad():
        for pair in pairs:
            sample = prepare_pair(pair, sequences, cfg, crop_rng)
            out = model.forward(model.embed(sample.template_img), sample.search_img,
                                use_atm=cfg.use_atm)
            predicted = 1 if out.presence.probs[0] >= out.presence.probs[1] else 0
            correct += int(predicted == pair.label)
    return correct / len(pairs)


def gradcheck_report(cfg: RunConfig, seed: int = 0, coords_per_param: int = 2,
                     eps: float = 1e-5) -> dict[str, float]:
    """Verify analytic gradients of every objective term and the total.

    Runs the toy model at the configured dtype on one fixed synthetic batch
    (one positive, one negative pair) and returns max relative error per term.
    """
    from .synthdata import SynthSpec, generate

    if cfg.preset != "toy":
        raise ConfigError("gradient checks run on the toy preset only")
    model = FocusTrackModel.initialize(cfg.model_config(), seed=seed)
    seqs = [generate(SynthSpec(frame_side=96, frames=4, noise_std=0.01, seed=seed + i))
            for i in range(2)]
    rng = Rng(seed)
    pairs = sample_pairs(seqs, 0.5, rng.spawn(1), 8)
    pos = next(p for p in pairs if p.label == 1)
    neg = next(p for p in pairs if p.label == 0)
    crop_rng = rng.spawn(2)
    batch = [prepare_pair(pos, seqs, cfg, crop_rng),
             prepare_pair(neg, seqs, cfg, crop_rng)]

    def term_fn(key):
        def fn():
            per = [sample_loss_terms(model, s, cfg)[key] for s in batch]
            return T.tmean(T.stack(per))
        return fn

    def total_fn():
        return batch_loss(model, batch, cfg)[0]

    report = {}
    for key in ("focal", "l1", "giou", "logits", "mask"):
        report[key] = grad_check(term_fn(key), model.tape, eps=eps,
                                 coords_per_param=coords_per_param, seed=seed)
    report["total"] = grad_check(total_fn, model.tape, eps=eps,
                                 coords_per_param=coords_per_param, seed=seed)
    return report
