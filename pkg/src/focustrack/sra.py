"""Search region adjustment.

Presence of the target in the current view is estimated from the CLS token
(one cross-attention pooling layer over search tokens, then a two-layer MLP).
The live search factor grows stepwise while both the presence probability and
the peak classification score stay under their thresholds, and snaps back to
the base factor as soon as either recovers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, SamplingError
from .rng import Rng
from .sampling import BoundingBox
from .tensor import GradientTape, Tensor


@dataclass(frozen=True)
class SraState:
    f: float = 6.0
    f_base: float = 6.0
    f_step: float = 1.0
    f_max: float = 8.0
    t_logits: float = 0.8
    t_score: float = 0.5

    def __post_init__(self):
        if not (self.f_base <= self.f <= self.f_max):
            raise ConfigError(f"factor {self.f} outside [{self.f_base}, {self.f_max}]")
        if self.f_step <= 0:
            raise ConfigError(f"f_step must be positive, got {self.f_step}")
        for name in ("t_logits", "t_score"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")


@dataclass
class PresenceOutput:
    """Two-way (present, absent) probabilities; `tensor` keeps the graph node."""

    probs: np.ndarray
    tensor: Tensor | None = None

    @property
    def logits(self) -> float:
        """Presence probability, the quantity thresholded against t_logits."""
        return float(self.probs[0])


def sra_update(state: SraState, logits: float, p_max: float) -> SraState:
    """One step of the factor state machine.

    Grow by f_step (clamped at f_max) only when presence probability and peak
    score are both below threshold; any other combination resets to f_base.
    """
    if not (0.0 <= logits <= 1.0 and 0.0 <= p_max <= 1.0):
        raise ValueError(f"logits/p_max must lie in [0, 1], got {logits}, {p_max}")
    if logits < state.t_logits and p_max < state.t_score:
        f = min(state.f + state.f_step, state.f_max)
    else:
        f = state.f_base
    return replace(state, f=f)


def init_sra_params(tape: GradientTape, dim: int, rng: Rng) -> None:
    for name in ("q", "k", "v", "o"):
        tape.param(f"sra.pool.{name}.w", (dim, dim), rng=rng)
        tape.param(f"sra.pool.{name}.b", (dim,), init="zeros")
    tape.param("sra.mlp.fc1.w", (dim, dim // 2), rng=rng)
    tape.param("sra.mlp.fc1.b", (dim // 2,), init="zeros")
    tape.param("sra.mlp.fc2.w", (dim // 2, 2), rng=rng)
    tape.param("sra.mlp.fc2.b", (2,), init="zeros")


def attention_pool(cls_out: Tensor, search_out: Tensor, params: GradientTape,
                   heads: int) -> Tensor:
    """Cross-attention with the CLS token as query, plus a residual."""
    out, _ = T.mha(cls_out, search_out, search_out, heads,
                   params.attention_weights("sra.pool"))
    return cls_out + out


def presence_head(pooled: Tensor, params: GradientTape) -> PresenceOutput:
    h = T.gelu(T.matmul(pooled, params["sra.mlp.fc1.w"]) + params["sra.mlp.fc1.b"])
    probs = T.softmax(T.matmul(h, params["sra.mlp.fc2.w"]) + params["sra.mlp.fc2.b"], axis=-1)
    return PresenceOutput(probs=probs.data.reshape(2).copy(), tensor=probs)


@dataclass
class PairSample:
    """One contrastive draw: template crop source plus a search frame.

    For positives the search box supervises localization; for negatives it is
    None and `avoid_box` carries the foreign sequence's target so crop
    placement can dodge it.
    """

    template_seq: int
    template_frame: int
    template_box: BoundingBox
    search_seq: int
    search_frame: int
    search_box: BoundingBox | None
    label: int
    avoid_box: BoundingBox | None = None


def _frames_with_target(seq) -> list[int]:
    return [i for i, b in enumerate(seq.annotation.boxes) if b is not None]


def sample_pairs(sequences, positive_ratio: float, rng: Rng, count: int) -> list[PairSample]:
    """Draw template/search pairs; same-sequence pairs are positives (label 1),
    cross-sequence pairs negatives (label 0). Each draw is positive with
    probability `positive_ratio`.
    """
    if not (0.0 < positive_ratio <= 1.0):
        raise ConfigError(f"positive_ratio must lie in (0, 1], got {positive_ratio}")
    usable = [(si, _frames_with_target(s)) for si, s in enumerate(sequences)]
    usable = [(si, fr) for si, fr in usable if fr]
    if not usable:
        raise SamplingError("no sequence contains a visible target")
    if positive_ratio < 1.0 and len(usable) < 2:
        raise SamplingError("negative pairs need at least two sequences")

    out: list[PairSample] = []
    coin = rng.uniform(count)
    for k in range(count):
        ti = rng.choice(0, len(usable))
        t_seq, t_frames = usable[ti]
        t_frame = t_frames[rng.choice(0, len(t_frames))]
        t_box = sequences[t_seq].annotation.boxes[t_frame]
        if coin[k] < positive_ratio:
            s_frame = t_frames[rng.choice(0, len(t_frames))]
            s_box = sequences[t_seq].annotation.boxes[s_frame]
            out.append(PairSample(t_seq, t_frame, t_box, t_seq, s_frame, s_box, 1))
        else:
            si = rng.choice(0, len(usable) - 1)
            if si >= ti:
                si += 1
            s_seq, _ = usable[si]
            n_frames = len(sequences[s_seq].frames)
            s_frame = rng.choice(0, n_frames)
            avoid = sequences[s_seq].annotation.boxes[s_frame]
            out.append(PairSample(t_seq, t_frame, t_box, s_seq, s_frame, None, 0,
                                  avoid_box=avoid))
    return out
