"""Context-growth and monologue-layout analysis.

Quantifies why merging channels per timestep beats interleaving them:
with 17 token slots per frame, an interleaving scheduler's context grows
17x faster, and quadratic attention cost grows 289x faster, capping the
audio duration a fixed context budget can hold. Also compares the text
channel statistics of sentence-level layouts against word-aligned ones
(contiguous runs vs fragmentation, WAIT vs PAD filler fractions).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .frames import FrameSequence, SLOTS_PER_FRAME, StreamConfig, TEXT_POS


@dataclass(frozen=True)
class SchedulingScheme:
    """How channels share the backbone context: merged or interleaved."""

    kind: str  # "native" (merged per step) or "tdm" (interleaved)
    channels: int = SLOTS_PER_FRAME

    def __post_init__(self) -> None:
        if self.kind not in ("native", "tdm"):
            raise ValueError(f"unknown scheduling kind {self.kind!r}")
        if self.channels < 1:
            raise ValueError("channel count must be positive")


@dataclass(frozen=True)
class CostReport:
    duration_s: float
    native_ctx_len: int
    tdm_ctx_len: int
    attention_ops_native: int
    attention_ops_tdm: int
    max_audio_s_at_budget: dict[str, float] | None

    def to_dict(self) -> dict:
        return asdict(self)


def context_growth(
    duration_s: float,
    cfg: StreamConfig,
    scheme: SchedulingScheme = SchedulingScheme("tdm"),
    budget_tokens: int | None = None,
) -> CostReport:
    """Context length and quadratic-attention proxy for both schedulers.

    `scheme.channels` sets how many slots the interleaving variant pays
    per frame. With a token budget, also reports the longest audio each
    scheduler can hold before exhausting it.
    """
    if duration_s < 0:
        raise ValueError("duration must be >= 0")
    rate = float(cfg.frame_rate_hz)
    native = math.ceil(duration_s * rate)
    tdm = native * scheme.channels
    budget_report = None
    if budget_tokens is not None:
        budget_report = {
            "native": budget_tokens / rate,
            "tdm": budget_tokens / (scheme.channels * rate),
        }
    return CostReport(
        duration_s=duration_s,
        native_ctx_len=native,
        tdm_ctx_len=tdm,
        attention_ops_native=native * native,
        attention_ops_tdm=tdm * tdm,
        max_audio_s_at_budget=budget_report,
    )


def context_curve(
    max_duration_s: float, cfg: StreamConfig, scheme: SchedulingScheme, points: int = 60
) -> list[tuple[float, int, int]]:
    """(t, native ctx, tdm ctx) samples for plotting context growth."""
    out = []
    for i in range(points + 1):
        t = max_duration_s * i / points
        rep = context_growth(t, cfg, scheme)
        out.append((t, rep.native_ctx_len, rep.tdm_ctx_len))
    return out


@dataclass(frozen=True)
class TextChannelStats:
    length: int
    longest_ordinary_run: int
    ordinary_runs: int
    wait_count: int
    pad_count: int

    @property
    def filler_fraction(self) -> float:
        return (self.wait_count + self.pad_count) / self.length if self.length else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filler_fraction"] = self.filler_fraction
        return d


def text_channel_stats(seq: FrameSequence) -> TextChannelStats:
    cfg = seq.config
    longest = 0
    runs = 0
    current = 0
    waits = 0
    pads = 0
    for frame in seq.frames:
        tok = frame.text
        if tok < cfg.text_vocab_base:
            current += 1
            if current == 1:
                runs += 1
            longest = max(longest, current)
        else:
            current = 0
            if tok == cfg.wait_id:
                waits += 1
            elif tok == cfg.pad_id:
                pads += 1
    return TextChannelStats(len(seq.frames), longest, runs, waits, pads)


@dataclass(frozen=True)
class MonologueComparison:
    natural: TextChannelStats
    word_aligned: TextChannelStats

    def to_dict(self) -> dict:
        return {"natural": self.natural.to_dict(), "word_aligned": self.word_aligned.to_dict()}


def monologue_stats(natural: FrameSequence, word_aligned: FrameSequence) -> MonologueComparison:
    """Contrast the two text-channel layouts built from the same pair."""
    if (
        natural.source_id is not None
        and word_aligned.source_id is not None
        and natural.source_id != word_aligned.source_id
    ):
        raise ValueError(
            f"layouts come from different sources: {natural.source_id!r} vs {word_aligned.source_id!r}"
        )
    return MonologueComparison(text_channel_stats(natural), text_channel_stats(word_aligned))
