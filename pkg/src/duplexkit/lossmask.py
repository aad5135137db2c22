"""Per-slot loss weights and the weighted cross-entropy they define.

Each supervised slot of a sequence contributes to exactly one of four
terms: semantic speech codes, acoustic speech codes, monologue text, and
WAIT filler, with per-term weights. Listening slots and empty speak slots
never contribute. The evaluation here is for verification against mock
log-probabilities only; no gradients or training loops live in this
package.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frames import (
    FrameSequence,
    LISTEN_POS,
    SLOTS_PER_FRAME,
    SPEAK_POS,
    SupervisionClass,
)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four loss terms. Defaults follow the stream recipe:
    semantic 1, acoustic 0.5, monologue 1, wait 0.01."""

    alpha1: float = 1.0
    alpha2: float = 0.5
    beta: float = 1.0
    gamma: float = 0.01

    def __post_init__(self) -> None:
        if min(self.alpha1, self.alpha2, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


# The word-level baseline recipe this design is contrasted against.
MOSHI_WEIGHTS = LossWeights(alpha1=100.0, alpha2=1.0, beta=1.0, gamma=0.5)

_CLASS_ORDER = (
    SupervisionClass.SPEAK_SEMANTIC,
    SupervisionClass.SPEAK_ACOUSTIC,
    SupervisionClass.MONOLOGUE,
    SupervisionClass.WAIT,
)


def weight_map(seq: FrameSequence, weights: LossWeights = LossWeights()) -> np.ndarray:
    """(n, 17) float64 weight per slot; zero wherever unsupervised.

    Empty speak slots are forced to zero regardless of their label (only
    non-empty speech tokens are supervised), and listening slots are
    always zero.
    """
    sup = seq.supervision
    lookup = np.zeros(len(SupervisionClass))
    lookup[SupervisionClass.SPEAK_SEMANTIC] = weights.alpha1
    lookup[SupervisionClass.SPEAK_ACOUSTIC] = weights.alpha2
    lookup[SupervisionClass.MONOLOGUE] = weights.beta
    lookup[SupervisionClass.WAIT] = weights.gamma
    out = lookup[sup]
    out[:, LISTEN_POS] = 0.0
    if len(seq):
        tokens = seq.tokens_array()
        empty_speak = tokens[:, SPEAK_POS] == seq.config.empty_audio_id
        speak_weights = out[:, SPEAK_POS]
        speak_weights[empty_speak] = 0.0
        out[:, SPEAK_POS] = speak_weights
    return out


def class_counts(seq: FrameSequence) -> dict[str, int]:
    """Histogram of supervision classes over all slots."""
    sup = seq.supervision
    return {cls.name.lower(): int((sup == cls).sum()) for cls in SupervisionClass}


@dataclass(frozen=True)
class CrossEntropyReport:
    """Normalized weighted CE plus the raw per-term partial sums."""

    loss: float
    total_weight: float
    semantic_sum: float
    acoustic_sum: float
    monologue_sum: float
    wait_sum: float

    @property
    def weighted_sum(self) -> float:
        return self.semantic_sum + self.acoustic_sum + self.monologue_sum + self.wait_sum


def weighted_ce(
    logprobs: np.ndarray, seq: FrameSequence, weights_map: np.ndarray
) -> CrossEntropyReport:
    """Evaluate sum(w * -logprob(target)) / sum(w) over supervised slots.

    `logprobs` has shape (n, 17, K) holding log-probabilities; every slot
    distribution must be normalized (probabilities summing to 1 +- 1e-6)
    and every supervised target must index into K.
    """
    n = len(seq)
    if logprobs.ndim != 3 or logprobs.shape[:2] != (n, SLOTS_PER_FRAME):
        raise ValueError(
            f"logprobs shape {logprobs.shape} does not match ({n}, {SLOTS_PER_FRAME}, K)"
        )
    if weights_map.shape != (n, SLOTS_PER_FRAME):
        raise ValueError("weight map shape does not match sequence")
    total_weight = float(weights_map.sum())
    if total_weight <= 0:
        raise ValueError("no supervised slots (zero weight map)")

    sums = np.exp(logprobs).sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        worst = float(np.abs(sums - 1.0).max())
        raise ValueError(f"log-probabilities are not normalized (max deviation {worst:.2e})")

    tokens = seq.tokens_array().astype(np.int64)
    if int(tokens[weights_map > 0].max(initial=0)) >= logprobs.shape[-1]:
        raise ValueError("a supervised target exceeds the distribution vocabulary")

    rows, slots = np.nonzero(weights_map > 0)
    nll = -logprobs[rows, slots, tokens[rows, slots]]
    w = weights_map[rows, slots]
    sup = seq.supervision[rows, slots]

    partials = {}
    for cls in _CLASS_ORDER:
        mask = sup == cls
        partials[cls] = float((w[mask] * nll[mask]).sum())
    weighted_sum = sum(partials.values())
    return CrossEntropyReport(
        loss=weighted_sum / total_weight,
        total_weight=total_weight,
        semantic_sum=partials[SupervisionClass.SPEAK_SEMANTIC],
        acoustic_sum=partials[SupervisionClass.SPEAK_ACOUSTIC],
        monologue_sum=partials[SupervisionClass.MONOLOGUE],
        wait_sum=partials[SupervisionClass.WAIT],
    )


def save_weight_map(path: str | Path, weights_map: np.ndarray) -> None:
    """Flat little-endian f32 dump, same slot ordering as the frame file."""
    Path(path).write_bytes(np.ascontiguousarray(weights_map, dtype="<f4").tobytes())


def load_weight_map(path: str | Path, n_frames: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    expected = n_frames * SLOTS_PER_FRAME * 4
    if len(raw) != expected:
        raise ValueError(f"weight file holds {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(n_frames, SLOTS_PER_FRAME).astype(np.float64)
