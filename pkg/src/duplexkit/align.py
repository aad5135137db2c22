"""Sentence-level text/audio alignment into duplex stream layouts.

Two layouts cover the first post-training stage: a lead layout where the
text channel runs ahead of the generated speech (speech codes start
`text_lead_steps` after the text, acoustic codebooks one step after the
semantic one, WAIT filling the text channel once the sentence is spoken
out), and a follow layout where the text trails the listened audio.
Aligned items are then concatenated with random silence gaps and padded
to a uniform length.

A word-aligned comparison layout (every token pinned to its pronunciation
frame, padding between words) exists only for the analyzer to contrast
against.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .codec import CodeFrame, empty_code_frame
from .frames import (
    Frame,
    FrameSequence,
    Marker,
    MarkerKind,
    SEMANTIC_POS,
    SLOTS_PER_FRAME,
    StreamConfig,
    SupervisionClass,
    TEXT_POS,
    unsupervised_labels,
)


class AlignmentError(ValueError):
    pass


class OversizeSequenceError(ValueError):
    def __init__(self, source_id: str | None, length: int, target_len: int):
        super().__init__(
            f"sequence {source_id!r} has {length} frames, exceeding pack target {target_len}"
        )
        self.source_id = source_id


@dataclass(frozen=True)
class AlignedPair:
    """One sentence transcript with its speech codes (sentence-level only)."""

    transcript: tuple[int, ...]
    audio: tuple[CodeFrame, ...]
    source_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "transcript", tuple(self.transcript))
        object.__setattr__(self, "audio", tuple(tuple(f) for f in self.audio))


@dataclass(frozen=True)
class PackingPolicy:
    """Gap sampling and pack shape for dataset packing."""

    gap_min_frames: int = 3
    gap_max_frames: int = 13
    target_len: int = 8192
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gap_min_frames < 0 or self.gap_max_frames < self.gap_min_frames:
            raise ValueError("gap range must satisfy 0 <= min <= max")
        if self.target_len < 1:
            raise ValueError("target_len must be positive")


def _check_pair(pair: AlignedPair, cfg: StreamConfig) -> None:
    if not pair.transcript:
        raise AlignmentError(f"{pair.source_id!r}: empty transcript")
    if not pair.audio:
        raise AlignmentError(f"{pair.source_id!r}: empty audio")
    for tok in pair.transcript:
        if not 0 <= tok < cfg.text_vocab_base:
            raise AlignmentError(
                f"{pair.source_id!r}: transcript token {tok} is not an ordinary token"
            )
    for i, codes in enumerate(pair.audio):
        if len(codes) != cfg.num_codebooks:
            raise AlignmentError(f"{pair.source_id!r}: audio frame {i} has {len(codes)} codes")
        if any(not 0 <= c < cfg.empty_audio_id for c in codes):
            raise AlignmentError(
                f"{pair.source_id!r}: audio frame {i} uses codes outside [0, {cfg.empty_audio_id})"
            )


def align_tts(pair: AlignedPair, cfg: StreamConfig) -> FrameSequence:
    """Lead layout: text first, speech trailing it on the speak channel.

    Text tokens occupy steps [0, T). Semantic speech codes start at
    `text_lead_steps`, acoustic ones `acoustic_delay_steps` later. WAIT
    fills the text channel from the end of the sentence to the end of the
    speech; if the text outlasts the speech the sequence simply extends to
    the text end with empty speak slots.
    """
    _check_pair(pair, cfg)
    t_len = len(pair.transcript)
    a_len = len(pair.audio)
    lead = cfg.text_lead_steps
    delay = cfg.acoustic_delay_steps
    empty = cfg.empty_audio_id
    length = max(t_len, lead + a_len + delay)

    frames: list[Frame] = []
    sup = unsupervised_labels(length)
    for t in range(length):
        if t < t_len:
            text = pair.transcript[t]
            sup[t, TEXT_POS] = SupervisionClass.MONOLOGUE
        else:
            text = cfg.wait_id
            sup[t, TEXT_POS] = SupervisionClass.WAIT
        speak = [empty] * cfg.num_codebooks
        if lead <= t < lead + a_len:
            speak[0] = pair.audio[t - lead][0]
            sup[t, SEMANTIC_POS] = SupervisionClass.SPEAK_SEMANTIC
        if lead + delay <= t < lead + delay + a_len:
            src = pair.audio[t - lead - delay]
            for cb in range(1, cfg.num_codebooks):
                speak[cb] = src[cb]
            sup[t, SEMANTIC_POS + 1 :] = SupervisionClass.SPEAK_ACOUSTIC
        frames.append(Frame(text, empty_code_frame(cfg), tuple(speak)))

    markers = [Marker(0, MarkerKind.SENTENCE_START), Marker(t_len - 1, MarkerKind.SENTENCE_END)]
    return FrameSequence(cfg, frames, sup, markers, source_id=pair.source_id)


def align_asr(pair: AlignedPair, cfg: StreamConfig) -> FrameSequence:
    """Follow layout: listened audio first, transcript right after it."""
    _check_pair(pair, cfg)
    t_len = len(pair.transcript)
    a_len = len(pair.audio)
    length = a_len + t_len

    frames: list[Frame] = []
    sup = unsupervised_labels(length)
    for t in range(length):
        if t < a_len:
            text = cfg.wait_id
            listen = tuple(pair.audio[t])
            sup[t, TEXT_POS] = SupervisionClass.WAIT
        else:
            text = pair.transcript[t - a_len]
            listen = empty_code_frame(cfg)
            sup[t, TEXT_POS] = SupervisionClass.MONOLOGUE
        frames.append(Frame(text, listen, empty_code_frame(cfg)))

    markers = [
        Marker(0, MarkerKind.USER_ONSET),
        Marker(a_len, MarkerKind.SENTENCE_START),
        Marker(length - 1, MarkerKind.SENTENCE_END),
    ]
    return FrameSequence(cfg, frames, sup, markers, source_id=pair.source_id)


def moshi_word_align(
    pair: AlignedPair, word_frames: Sequence[int], cfg: StreamConfig
) -> FrameSequence:
    """Word-level comparison layout: tokens at pronunciation frames.

    Every transcript token is pinned to its (word-level) frame index and
    the text channel is padded between words. Speech codes sit undelayed
    at [0, A). Only the analyzer consumes this.
    """
    _check_pair(pair, cfg)
    if len(word_frames) != len(pair.transcript):
        raise AlignmentError("one timestamp per transcript token is required")
    frames_list = [int(f) for f in word_frames]
    if any(f < 0 for f in frames_list):
        raise AlignmentError("word frames must be non-negative")
    if any(b <= a for a, b in zip(frames_list, frames_list[1:])):
        raise AlignmentError("word frames must be strictly increasing")

    a_len = len(pair.audio)
    length = max(frames_list[-1] + 1, a_len)
    empty = cfg.empty_audio_id
    by_frame = dict(zip(frames_list, pair.transcript))

    frames: list[Frame] = []
    sup = unsupervised_labels(length)
    for t in range(length):
        if t in by_frame:
            text = by_frame[t]
            sup[t, TEXT_POS] = SupervisionClass.MONOLOGUE
        else:
            text = cfg.pad_id
            sup[t, TEXT_POS] = SupervisionClass.WAIT
        speak = tuple(pair.audio[t]) if t < a_len else empty_code_frame(cfg)
        if t < a_len:
            sup[t, SEMANTIC_POS] = SupervisionClass.SPEAK_SEMANTIC
            sup[t, SEMANTIC_POS + 1 :] = SupervisionClass.SPEAK_ACOUSTIC
        frames.append(Frame(text, empty_code_frame(cfg), speak))

    markers = [
        Marker(frames_list[0], MarkerKind.SENTENCE_START),
        Marker(frames_list[-1], MarkerKind.SENTENCE_END),
    ]
    return FrameSequence(cfg, frames, sup, markers, source_id=pair.source_id)


def _gap_frames(cfg: StreamConfig, n: int) -> tuple[list[Frame], np.ndarray]:
    frames = [Frame.filler(cfg) for _ in range(n)]
    sup = unsupervised_labels(n)
    sup[:, TEXT_POS] = SupervisionClass.WAIT
    return frames, sup


def _pad_frames(cfg: StreamConfig, n: int) -> tuple[list[Frame], np.ndarray]:
    return [Frame.padding(cfg) for _ in range(n)], unsupervised_labels(n)


def pack(sequences: Sequence[FrameSequence], policy: PackingPolicy) -> list[FrameSequence]:
    """Greedy first-fit concatenation into fixed-length packs.

    Neighbouring items inside a pack are separated by a sampled silence
    gap (WAIT text, empty audio). When the next item no longer fits, the
    current pack is closed and padded with PAD/empty frames to exactly
    `target_len`. Deterministic for a given policy seed.
    """
    if not sequences:
        return []
    cfg = sequences[0].config
    rng = random.Random(policy.seed)
    packs: list[FrameSequence] = []

    cur_frames: list[Frame] = []
    cur_sup: list[np.ndarray] = []
    cur_markers: list[Marker] = []

    def close_pack() -> None:
        n = len(cur_frames)
        pad, pad_sup = _pad_frames(cfg, policy.target_len - n)
        frames = cur_frames + pad
        sup = np.concatenate([*cur_sup, pad_sup]) if cur_sup else pad_sup
        packs.append(
            FrameSequence(cfg, frames, sup, list(cur_markers), source_id=f"pack-{len(packs):05d}")
        )
        cur_frames.clear()
        cur_sup.clear()
        cur_markers.clear()

    for seq in sequences:
        if len(seq) > policy.target_len:
            raise OversizeSequenceError(seq.source_id, len(seq), policy.target_len)
        if seq.config != cfg:
            raise AlignmentError("cannot pack sequences with differing stream configs")
        gap = 0 if not cur_frames else rng.randint(policy.gap_min_frames, policy.gap_max_frames)
        if len(cur_frames) + gap + len(seq) > policy.target_len:
            close_pack()
            gap = 0
        if gap:
            g_frames, g_sup = _gap_frames(cfg, gap)
            cur_frames.extend(g_frames)
            cur_sup.append(g_sup)
        offset = len(cur_frames)
        cur_frames.extend(seq.frames)
        cur_sup.append(seq.supervision)
        cur_markers.extend(Marker(m.step + offset, m.kind) for m in seq.markers)

    if cur_frames:
        close_pack()
    return packs
