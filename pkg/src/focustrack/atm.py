"""Attention-derived target masks.

A learnable query token cross-attends to per-layer search features; the
pre-softmax query/key similarity of each block's final layer, squashed by a
sigmoid, is that block's target mask. Masks from all tapped depths are
averaged and weighted by a two-way (target, background) class score, and the
result both refines the classification score map and serves as a coarse
segmentation output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import Rng
from .sampling import bilinear_resize
from .tensor import GradientTape, Tensor


@dataclass(frozen=True)
class AtmConfig:
    blocks: int = 3
    layers_per_block: int = 3
    dim: int = 384
    heads: int = 8

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"mask dim {self.dim} not divisible by {self.heads} heads")
        if self.blocks < 1 or self.layers_per_block < 1:
            raise ConfigError("blocks and layers_per_block must be >= 1")


@dataclass
class MaskOutput:
    fused: Tensor                       # (G, G) in [0, 1]
    per_block: list = field(default_factory=list)  # (G, G) sigmoid masks
    class_probs: Tensor | None = None   # (1, 2): (target, background)

    @property
    def target_prob(self) -> float:
        return float(self.class_probs.data[0, 0])


def init_atm_params(tape: GradientTape, cfg: AtmConfig, enc_dim: int, rng: Rng) -> None:
    d = cfg.dim
    tape.param("atm.query", (1, d), rng=rng)
    for m in range(1, cfg.blocks + 1):
        tape.param(f"atm.blk{m}.in_proj.w", (enc_dim, d), rng=rng)
        tape.param(f"atm.blk{m}.in_proj.b", (d,), init="zeros")
        for j in range(1, cfg.layers_per_block + 1):
            tape.param(f"atm.blk{m}.layer{j}.q.w", (d, d), rng=rng)
            tape.param(f"atm.blk{m}.layer{j}.q.b", (d,), init="zeros")
            tape.param(f"atm.blk{m}.layer{j}.o.w", (d, d), rng=rng)
            tape.param(f"atm.blk{m}.layer{j}.o.b", (d,), init="zeros")
    tape.param("atm.cls.w", (d, 2), rng=rng)
    tape.param("atm.cls.b", (2,), init="zeros")


def atm_block(query: Tensor, tap: Tensor, block: int, cfg: AtmConfig,
              params: GradientTape) -> tuple[Tensor, Tensor]:
    """One block: cross-attention layers refine the query against one tap.

    Keys and values are the tap after the block's input projection; each layer
    projects only the query and the attention output. Returns the updated
    query and the final layer's head-averaged pre-softmax similarity reshaped
    to the score grid (mask logits, pre-sigmoid).
    """
    n, _ = tap.shape
    g = math.isqrt(n)
    if g * g != n:
        raise ShapeError(f"{n} search tokens do not tile a square grid")
    if tap.shape[1] != params[f"atm.blk{block}.in_proj.w"].shape[0]:
        raise ShapeError(f"tap width {tap.shape[1]} does not match block {block} projection")
    kv = T.matmul(tap, params[f"atm.blk{block}.in_proj.w"]) + params[f"atm.blk{block}.in_proj.b"]
    kv_heads = T.split_heads(kv, cfg.heads)
    scores = None
    for j in range(1, cfg.layers_per_block + 1):
        qp = T.matmul(query, params[f"atm.blk{block}.layer{j}.q.w"]) \
            + params[f"atm.blk{block}.layer{j}.q.b"]
        scores = T.attention_scores(T.split_heads(qp, cfg.heads), kv_heads)
        attn = T.softmax(scores, axis=-1)
        ctx = T.merge_heads(T.matmul(attn, kv_heads))
        query = query + T.matmul(ctx, params[f"atm.blk{block}.layer{j}.o.w"]) \
            + params[f"atm.blk{block}.layer{j}.o.b"]
    mask_logits = T.reshape(T.tmean(scores, axis=0), (g, g))
    return query, mask_logits


def atm_forward(taps, cfg: AtmConfig, params: GradientTape) -> MaskOutput:
    """Thread the query through all blocks (shallow tap first) and fuse masks.

    Fusion is the mean of the per-block sigmoid masks scaled by the target
    class probability, so a confident background call zeroes the fused mask.
    """
    if len(taps) != cfg.blocks:
        raise ConfigError(f"{len(taps)} taps for {cfg.blocks} mask blocks")
    query = params["atm.query"]
    per_block = []
    acc = None
    for m, tap in enumerate(taps, start=1):
        query, logits = atm_block(query, tap, m, cfg, params)
        mask = T.sigmoid(logits)
        per_block.append(mask)
        acc = mask if acc is None else acc + mask
    class_probs = T.softmax(T.matmul(query, params["atm.cls.w"]) + params["atm.cls.b"],
                            axis=-1)
    fused = (acc * (1.0 / cfg.blocks)) * class_probs[0, 0]
    return MaskOutput(fused=fused, per_block=per_block, class_probs=class_probs)


def refine_scores(score: Tensor, fused_mask: Tensor) -> Tensor:
    """Elementwise product; the mask acts as an attention weight on the scores."""
    if score.shape != fused_mask.shape:
        raise ShapeError(f"score {score.shape} != mask {fused_mask.shape}")
    return score * fused_mask


def upsample_mask(fused_mask: Tensor | np.ndarray, out_side: int) -> np.ndarray:
    """Bilinear upsample of the fused mask to crop resolution."""
    m = fused_mask.data if isinstance(fused_mask, Tensor) else np.asarray(fused_mask)
    g = m.shape[0]
    if out_side < g:
        raise ValueError(f"out_side {out_side} smaller than mask grid {g}")
    if out_side == g:
        return m.copy()
    return bilinear_resize(m, out_side, out_side)


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """8-bit grayscale export of a [0, 1] mask."""
    return np.clip(np.round(mask * 255.0), 0, 255).astype(np.uint8)
