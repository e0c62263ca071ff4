"""Flat run configuration: presets, toggles, thresholds, training knobs.

Loads from a flat JSON object; CLI flags override file values; the effective
config is echoed to stdout and embedded in every output artifact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .model import MODEL_PRESETS, ModelConfig
from .sra import SraState


@dataclass(frozen=True)
class RunConfig:
    preset: str = "toy"
    use_sra: bool = True
    use_atm: bool = True
    use_window: bool = True
    # factor schedule and confidence thresholds
    f_base: float = 6.0
    f_step: float = 1.0
    f_max: float = 8.0
    t_logits: float = 0.8
    t_score: float = 0.5
    template_factor: float = 2.0
    # objective weights
    w_giou: float = 2.0
    w_l1: float = 5.0
    w_focal: float = 1.0
    w_logits: float = 1.0
    w_mask: float = 1.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    mask_focal_alpha: float = 0.25
    mask_focal_gamma: float = 2.0
    # training
    steps: int = 400
    lr_backbone: float = 4e-4
    lr_heads: float = 2e-3
    batch: int = 8
    positive_ratio: float = 0.7
    phase: str = "single"
    phase2_steps: int = 150
    center_jitter: float = 1.5   # positive-pair center jitter, in target sizes
    seed: int = 0
    dtype: str = "f32"
    timing: bool = False         # write measured per-frame wall time into traces

    def __post_init__(self):
        if self.preset not in MODEL_PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.lr_backbone <= 0 or self.lr_heads <= 0:
            raise ConfigError("learning rates must be positive")
        if self.phase not in ("single", "two"):
            raise ConfigError(f"phase must be 'single' or 'two', got {self.phase!r}")
        if not (0 < self.positive_ratio <= 1):
            raise ConfigError(f"positive_ratio must lie in (0, 1], got {self.positive_ratio}")
        # Instantiating these validates factor schedule, thresholds, and dims.
        self.sra_state()
        self.model_config()

    def sra_state(self) -> SraState:
        return SraState(f=self.f_base, f_base=self.f_base, f_step=self.f_step,
                        f_max=self.f_max, t_logits=self.t_logits, t_score=self.t_score)

    def model_config(self) -> ModelConfig:
        return MODEL_PRESETS[self.preset](dtype=self.dtype)

    def loss_weights(self) -> LossWeights:
        return LossWeights(giou=self.w_giou, l1=self.w_l1, focal=self.w_focal,
                           logits=self.w_logits, mask=self.w_mask)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name for f in fields(RunConfig)}


def config_from_dict(values: dict) -> RunConfig:
    unknown = set(values) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    values: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        values.update(raw)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(values)
