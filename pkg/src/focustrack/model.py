"""Full tracker network: backbone + box head + mask module + presence head,
with preset dimension sets and weight container round-tripping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import atm as atm_mod
from . import bbox_head, encoder, sra
from .atm import AtmConfig, MaskOutput
from .bbox_head import HeadOutput, tokens_to_map
from .encoder import EncoderConfig, EncoderOutput
from .errors import ConfigError
from .rng import Rng
from .sra import PresenceOutput
from .tensor import GradientTape, Tensor, load_ntc1, save_ntc1


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig
    atm: AtmConfig
    pool_heads: int
    head_stages: int = 3
    dtype: str = "f32"

    def __post_init__(self):
        if self.atm.blocks != len(self.encoder.taps):
            raise ConfigError(
                f"{self.atm.blocks} mask blocks vs {len(self.encoder.taps)} encoder taps")


def toy_model_config(dtype: str = "f32") -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(patch=8, dim=64, layers=4, heads=4, template_side=32,
                              search_side=64, taps=(2, 3, 4), in_channels=1),
        atm=AtmConfig(blocks=3, layers_per_block=3, dim=32, heads=4),
        pool_heads=4,
        dtype=dtype)


def full_model_config(dtype: str = "f32") -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(patch=16, dim=768, layers=12, heads=12, template_side=128,
                              search_side=256, taps=(6, 8, 12), in_channels=3),
        atm=AtmConfig(blocks=3, layers_per_block=3, dim=384, heads=8),
        pool_heads=8,
        dtype=dtype)


MODEL_PRESETS = {"toy": toy_model_config, "full": full_model_config}


@dataclass
class ModelOutput:
    encoder: EncoderOutput
    head: HeadOutput
    mask: MaskOutput | None
    refined: Tensor | None     # mask-refined score map (None when masks are off)
    presence: PresenceOutput

    @property
    def score_for_decode(self):
        return self.refined if self.refined is not None else self.head.score


class FocusTrackModel:
    """Parameter container plus the composed forward pass."""

    def __init__(self, cfg: ModelConfig, tape: GradientTape):
        self.cfg = cfg
        self.tape = tape

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int = 0) -> "FocusTrackModel":
        tape = GradientTape(dtype=cfg.dtype)
        root = Rng(seed)
        encoder.init_encoder_params(tape, cfg.encoder, root.spawn(11))
        bbox_head.init_head_params(tape, cfg.encoder.dim, root.spawn(12), cfg.head_stages)
        sra.init_sra_params(tape, cfg.encoder.dim, root.spawn(13))
        atm_mod.init_atm_params(tape, cfg.atm, cfg.encoder.dim, root.spawn(14))
        return cls(cfg, tape)

    @classmethod
    def from_weights(cls, cfg: ModelConfig, path) -> "FocusTrackModel":
        model = cls.initialize(cfg, seed=0)
        model.tape.load_state_dict(load_ntc1(path))
        return model

    def save_weights(self, path) -> None:
        save_ntc1(path, self.tape.state_dict())

    def embed(self, image: np.ndarray) -> Tensor:
        """(ch, S, S) image -> patch tokens."""
        return encoder.patch_embed(
            np.asarray(image, dtype=self.tape.dtype),
            self.tape["patch_embed.w"], self.tape["patch_embed.b"], self.cfg.encoder.patch)

    def forward(self, template_tokens: Tensor, search_image: np.ndarray | Tensor,
                use_atm: bool = True) -> ModelOutput:
        cfg = self.cfg
        search_tokens = search_image if isinstance(search_image, Tensor) \
            else self.embed(search_image)
        enc = encoder.encode(template_tokens, search_tokens, cfg.encoder, self.tape)
        head = bbox_head.head_forward(tokens_to_map(enc.search_out, cfg.encoder.grid),
                                      self.tape, cfg.head_stages)
        mask = refined = None
        if use_atm:
            mask = atm_mod.atm_forward(enc.taps, cfg.atm, self.tape)
            refined = atm_mod.refine_scores(head.score, mask.fused)
        pooled = sra.attention_pool(enc.cls_out, enc.search_out, self.tape, cfg.pool_heads)
        presence = sra.presence_head(pooled, self.tape)
        return ModelOutput(encoder=enc, head=head, mask=mask, refined=refined,
                           presence=presence)
