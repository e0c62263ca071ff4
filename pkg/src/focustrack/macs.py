"""Analytic multiply-accumulate counts for one tracked frame.

Counts cover matmul/convolution MACs only (no biases, activations or norms):
  - patch embedding: tokens * (channels * patch^2) * width
  - per encoder layer: 4*N*C^2 (qkv + output projection) + 2*N^2*C (score and
    value matmuls) + 8*N*C^2 (feed-forward at ratio 4), with N the full
    sequence length (template + search tokens, + 1 CLS unless baseline)
  - box head: the three conv branches on the G*G map
  - presence path: CLS pooling projections + the two-layer MLP
  - mask path: per block, the tap projection plus per-layer query/output
    projections and the attention matmuls against the projected tap.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import MODEL_PRESETS, ModelConfig


@dataclass(frozen=True)
class MacBreakdown:
    patch_embed: int
    encoder: int
    head: int
    presence: int
    mask: int

    @property
    def total(self) -> int:
        return self.patch_embed + self.encoder + self.head + self.presence + self.mask

    @property
    def total_g(self) -> float:
        return self.total / 1e9


def _head_macs(dim: int, grid: int, stages: int) -> int:
    cells = grid * grid
    total = 0
    for out_ch in (1, 2, 2):  # score, offset, size branches
        c = dim
        for _ in range(stages):
            nxt = max(1, c // 2)
            total += cells * 9 * c * nxt
            c = nxt
        total += cells * c * out_ch
    return total


def count_macs(cfg: ModelConfig, baseline: bool = False) -> MacBreakdown:
    enc = cfg.encoder
    c = enc.dim
    n_tokens = enc.n_template + enc.n_search
    n = n_tokens if baseline else 1 + n_tokens

    patch = n_tokens * (enc.in_channels * enc.patch ** 2) * c
    per_layer = 4 * n * c * c + 2 * n * n * c + 2 * enc.ffn_ratio * n * c * c
    encoder_macs = enc.layers * per_layer
    head = _head_macs(c, enc.grid, cfg.head_stages)

    presence = 0
    mask = 0
    if not baseline:
        nx = enc.n_search
        # attention pooling: q/k/v/out projections + score and value matmuls
        presence = (1 + 2 * nx + 1) * c * c + 2 * nx * c
        presence += c * (c // 2) + (c // 2) * 2
        d = cfg.atm.dim
        per_block = nx * c * d  # tap projection, shared keys/values
        per_block += cfg.atm.layers_per_block * (2 * d * d + 2 * nx * d)
        mask = cfg.atm.blocks * per_block + d * 2

    return MacBreakdown(patch_embed=patch, encoder=encoder_macs, head=head,
                        presence=presence, mask=mask)


def count_macs_preset(preset: str, baseline: bool = False) -> MacBreakdown:
    return count_macs(MODEL_PRESETS[preset](), baseline=baseline)
