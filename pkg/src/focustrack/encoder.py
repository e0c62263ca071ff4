"""Joint template/search/CLS transformer backbone.

The template crop, the search crop and one learnable CLS token are embedded,
concatenated into a single sequence and passed through pre-norm self-attention
blocks, so template and search features interact at every depth. Per-layer
search slices ("taps") are recorded for the mask module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .rng import Rng
from .tensor import GradientTape, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    patch: int
    dim: int
    layers: int
    heads: int
    template_side: int
    search_side: int
    taps: tuple[int, ...]
    ffn_ratio: int = 4
    in_channels: int = 1
    ln_eps: float = 1e-6

    def __post_init__(self):
        if self.template_side % self.patch or self.search_side % self.patch:
            raise ConfigError(
                f"input sides ({self.template_side}, {self.search_side}) must be "
                f"divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if any(t < 1 or t > self.layers for t in self.taps):
            raise ConfigError(f"taps {self.taps} outside 1..{self.layers}")
        if list(self.taps) != sorted(set(self.taps)):
            raise ConfigError(f"taps {self.taps} must be strictly increasing")

    @property
    def n_template(self) -> int:
        return (self.template_side // self.patch) ** 2

    @property
    def n_search(self) -> int:
        return (self.search_side // self.patch) ** 2

    @property
    def grid(self) -> int:
        return self.search_side // self.patch

    @property
    def seq_len(self) -> int:
        return 1 + self.n_template + self.n_search


@dataclass
class EncoderOutput:
    cls_out: Tensor           # (1, C)
    template_out: Tensor      # (N_z, C)
    search_out: Tensor        # (N_x, C)
    taps: list = field(default_factory=list)  # one (N_x, C) slice per tap layer


def init_encoder_params(tape: GradientTape, cfg: EncoderConfig, rng: Rng) -> None:
    c = cfg.dim
    tape.param("patch_embed.w", (cfg.in_channels * cfg.patch ** 2, c), rng=rng)
    tape.param("patch_embed.b", (c,), init="zeros")
    tape.param("cls.tok", (1, c), rng=rng)
    tape.param("pos.cls", (1, c), rng=rng)
    tape.param("pos.z", (cfg.n_template, c), rng=rng)
    tape.param("pos.x", (cfg.n_search, c), rng=rng)
    tape.param("id.z", (1, c), rng=rng)
    tape.param("id.x", (1, c), rng=rng)
    hidden = cfg.ffn_ratio * c
    for l in range(1, cfg.layers + 1):
        tape.param(f"blk{l}.ln1.w", (c,), init="ones")
        tape.param(f"blk{l}.ln1.b", (c,), init="zeros")
        tape.param(f"blk{l}.qkv.w", (c, 3 * c), rng=rng)
        tape.param(f"blk{l}.qkv.b", (3 * c,), init="zeros")
        tape.param(f"blk{l}.proj.w", (c, c), rng=rng)
        tape.param(f"blk{l}.proj.b", (c,), init="zeros")
        tape.param(f"blk{l}.ln2.w", (c,), init="ones")
        tape.param(f"blk{l}.ln2.b", (c,), init="zeros")
        tape.param(f"blk{l}.fc1.w", (c, hidden), rng=rng)
        tape.param(f"blk{l}.fc1.b", (hidden,), init="zeros")
        tape.param(f"blk{l}.fc2.w", (hidden, c), rng=rng)
        tape.param(f"blk{l}.fc2.b", (c,), init="zeros")


def patch_embed(image: Tensor | np.ndarray, w: Tensor, b: Tensor, patch: int) -> Tensor:
    """Non-overlapping PxP patches projected to the embed width.

    Equivalent to a stride-P convolution; template and search share w/b.
    """
    img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=w.dtype))
    ch, s0, s1 = img.shape
    if s0 != s1:
        raise ShapeError(f"expected a square image, got {img.shape}")
    if s0 % patch:
        raise ConfigError(f"side {s0} not divisible by patch {patch}")
    g = s0 // patch
    x = T.reshape(img, (ch, g, patch, g, patch))
    x = T.transpose(x, (1, 3, 0, 2, 4))          # (gy, gx, ch, py, px)
    x = T.reshape(x, (g * g, ch * patch * patch))
    return T.matmul(x, w) + b


def _block(x: Tensor, layer: int, cfg: EncoderConfig, p: GradientTape) -> Tensor:
    c = cfg.dim
    h = T.layer_norm(x, p[f"blk{layer}.ln1.w"], p[f"blk{layer}.ln1.b"], cfg.ln_eps)
    qkv_w, qkv_b = p[f"blk{layer}.qkv.w"], p[f"blk{layer}.qkv.b"]
    attn_w = T.AttentionWeights(
        wq=qkv_w[:, :c], bq=qkv_b[:c],
        wk=qkv_w[:, c:2 * c], bk=qkv_b[c:2 * c],
        wv=qkv_w[:, 2 * c:], bv=qkv_b[2 * c:],
        wo=p[f"blk{layer}.proj.w"], bo=p[f"blk{layer}.proj.b"])
    attn_out, _ = T.mha(h, h, h, cfg.heads, attn_w)
    x = x + attn_out
    h2 = T.layer_norm(x, p[f"blk{layer}.ln2.w"], p[f"blk{layer}.ln2.b"], cfg.ln_eps)
    ffn = T.matmul(T.gelu(T.matmul(h2, p[f"blk{layer}.fc1.w"]) + p[f"blk{layer}.fc1.b"]),
                   p[f"blk{layer}.fc2.w"]) + p[f"blk{layer}.fc2.b"]
    return x + ffn


def encode(template_tokens: Tensor, search_tokens: Tensor, cfg: EncoderConfig,
           params: GradientTape) -> EncoderOutput:
    """Run [cls; template; search] through the backbone, tapping search slices."""
    nz, nx, c = cfg.n_template, cfg.n_search, cfg.dim
    if template_tokens.shape != (nz, c):
        raise ShapeError(f"template tokens {template_tokens.shape} != ({nz}, {c})")
    if search_tokens.shape != (nx, c):
        raise ShapeError(f"search tokens {search_tokens.shape} != ({nx}, {c})")
    cls = params["cls.tok"] + params["pos.cls"]
    z = template_tokens + params["pos.z"] + params["id.z"]
    x = search_tokens + params["pos.x"] + params["id.x"]
    seq = T.concat([cls, z, x], axis=0)
    taps = []
    for l in range(1, cfg.layers + 1):
        seq = _block(seq, l, cfg, params)
        if l in cfg.taps:
            taps.append(seq[1 + nz:])
    return EncoderOutput(cls_out=seq[0:1], template_out=seq[1:1 + nz],
                         search_out=seq[1 + nz:], taps=taps)
