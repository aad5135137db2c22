"""Dialog stream builders for supervised fine-tuning data.

Three layouts are produced from the same turn-structured scripts:

* semi-duplex with transcription: the model listens to the whole user
  utterance, transcribes it between an ASR-begin token and an answer
  token, then responds in text with speech trailing 2 steps behind;
* semi-duplex without transcription: the transcription span is dropped,
  the answer token follows the user audio directly;
* full-duplex: user turns may barge in at a random step inside the
  model's speaking span, forcing the stream to cut both its text and
  speak channels to silence after a fixed reaction delay.

All randomness (inter-turn gaps, interruption coin flips, onsets) is
drawn from streams derived from (seed, dialog id), so corpus builds are
order-independent and reproducible.
"""

from __future__ import annotations

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
)
from .seeding import derive_random

# Silence between a model turn's speech end and the next user onset,
# in frames; same distribution the dataset packer uses.
TURN_GAP_FRAMES = (3, 13)


class DialogError(ValueError):
    pass


@dataclass(frozen=True)
class DialogTurn:
    speaker: str
    transcript: tuple[int, ...]
    audio: tuple[CodeFrame, ...]
    onset_hint: int | None = None  # barge-in offset into the prior speaking span

    def __post_init__(self) -> None:
        object.__setattr__(self, "transcript", tuple(self.transcript))
        object.__setattr__(self, "audio", tuple(tuple(f) for f in self.audio))


@dataclass(frozen=True)
class DialogScript:
    dialog_id: str
    turns: tuple[DialogTurn, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))


@dataclass(frozen=True)
class InterruptionPolicy:
    p_interrupt: float = 0.7
    reaction_delay_s: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_interrupt <= 1.0:
            raise ValueError("p_interrupt must be in [0, 1]")
        if self.reaction_delay_s < 0:
            raise ValueError("reaction delay must be >= 0")

    def reaction_frames(self, cfg: StreamConfig) -> int:
        return round(self.reaction_delay_s * float(cfg.frame_rate_hz))


def _check_script(script: DialogScript, cfg: StreamConfig, require_user_text: bool) -> None:
    turns = script.turns
    if len(turns) < 2:
        raise DialogError(f"{script.dialog_id!r}: a dialog needs at least one user/model exchange")
    if len(turns) % 2 != 0:
        raise DialogError(f"{script.dialog_id!r}: malformed turn order (dangling final turn)")
    if len(turns) > 20:
        raise DialogError(f"{script.dialog_id!r}: more than 10 exchanges")
    for i, turn in enumerate(turns):
        expected = "user" if i % 2 == 0 else "model"
        if turn.speaker != expected:
            raise DialogError(
                f"{script.dialog_id!r}: malformed turn order (turn {i} is {turn.speaker!r}, "
                f"expected {expected!r})"
            )
        if not turn.audio:
            raise DialogError(f"{script.dialog_id!r}: turn {i} has no audio")
        for j, codes in enumerate(turn.audio):
            if len(codes) != cfg.num_codebooks:
                raise DialogError(f"{script.dialog_id!r}: turn {i} audio frame {j} malformed")
            if any(not 0 <= c < cfg.empty_audio_id for c in codes):
                raise DialogError(
                    f"{script.dialog_id!r}: turn {i} audio frame {j} uses codes outside "
                    f"[0, {cfg.empty_audio_id})"
                )
        needs_text = turn.speaker == "model" or require_user_text
        if needs_text and not turn.transcript:
            raise DialogError(f"{script.dialog_id!r}: turn {i} ({turn.speaker}) has empty transcript")
        for tok in turn.transcript:
            if not 0 <= tok < cfg.text_vocab_base:
                raise DialogError(f"{script.dialog_id!r}: turn {i} token {tok} is not ordinary")


class _Canvas:
    """Mutable step-indexed scratchpad the builders paint channels onto."""

    def __init__(self, cfg: StreamConfig):
        self.cfg = cfg
        self.texts: list[int] = []
        self.listens: list[CodeFrame] = []
        self.speaks: list[list[int]] = []
        self.sup: list[list[int]] = []

    def __len__(self) -> int:
        return len(self.texts)

    def ensure(self, length: int) -> None:
        cfg = self.cfg
        while len(self.texts) < length:
            self.texts.append(cfg.wait_id)
            self.listens.append(empty_code_frame(cfg))
            self.speaks.append([cfg.empty_audio_id] * cfg.num_codebooks)
            row = [int(SupervisionClass.UNSUPERVISED)] * SLOTS_PER_FRAME
            row[TEXT_POS] = int(SupervisionClass.WAIT)
            self.sup.append(row)

    def set_text(self, step: int, token: int, cls: SupervisionClass) -> None:
        self.ensure(step + 1)
        self.texts[step] = token
        self.sup[step][TEXT_POS] = int(cls)

    def set_listen(self, step: int, codes: CodeFrame) -> None:
        self.ensure(step + 1)
        self.listens[step] = tuple(codes)

    def set_semantic(self, step: int, code: int) -> None:
        self.ensure(step + 1)
        self.speaks[step][0] = code
        self.sup[step][SEMANTIC_POS] = int(SupervisionClass.SPEAK_SEMANTIC)

    def set_acoustic(self, step: int, codes: CodeFrame) -> None:
        self.ensure(step + 1)
        for cb in range(1, self.cfg.num_codebooks):
            self.speaks[step][cb] = codes[cb]
            self.sup[step][SEMANTIC_POS + cb] = int(SupervisionClass.SPEAK_ACOUSTIC)

    def cut_to_silence(self, start: int, end: int) -> None:
        """Replace [start, end] with empty speak codes and WAIT text."""
        self.ensure(end + 1)
        cfg = self.cfg
        for step in range(start, end + 1):
            self.speaks[step] = [cfg.empty_audio_id] * cfg.num_codebooks
            for cb in range(cfg.num_codebooks):
                self.sup[step][SEMANTIC_POS + cb] = int(SupervisionClass.UNSUPERVISED)
            self.texts[step] = cfg.wait_id
            self.sup[step][TEXT_POS] = int(SupervisionClass.WAIT)

    def to_sequence(self, cfg: StreamConfig, markers: list[Marker], source_id: str) -> FrameSequence:
        frames = [
            Frame(text, listen, tuple(speak))
            for text, listen, speak in zip(self.texts, self.listens, self.speaks)
        ]
        sup = np.array(self.sup, dtype=np.uint8) if self.sup else None
        return FrameSequence(cfg, frames, sup, sorted(markers), source_id=source_id)


def _build(
    script: DialogScript,
    cfg: StreamConfig,
    *,
    include_asr: bool,
    policy: InterruptionPolicy | None,
    seed: int,
    gap_range: tuple[int, int] = TURN_GAP_FRAMES,
) -> FrameSequence:
    _check_script(script, cfg, require_user_text=include_asr)
    gap_rng = derive_random(seed, script.dialog_id, "gap")
    int_rng = derive_random(seed, script.dialog_id, "interrupt") if policy else None
    reaction = policy.reaction_frames(cfg) if policy else 0
    lead = cfg.text_lead_steps
    delay = cfg.acoustic_delay_steps

    canvas = _Canvas(cfg)
    markers: list[Marker] = []
    pairs = list(zip(script.turns[0::2], script.turns[1::2]))
    cursor_end = -1  # last step holding laid-out content
    prev_span: tuple[int, int] | None = None  # prior model turn's speaking span

    for i, (user, model) in enumerate(pairs):
        u_len = len(user.audio)
        onset: int | None = None
        if policy is not None and i > 0 and prev_span is not None:
            span_start, span_end = prev_span
            if int_rng.random() < policy.p_interrupt:
                lo, hi = span_start + 1, span_end - reaction
                if user.onset_hint is not None:
                    onset = span_start + user.onset_hint
                    if not lo <= onset <= hi:
                        raise DialogError(
                            f"{script.dialog_id!r}: onset hint {user.onset_hint} leaves no room "
                            f"for an observable cutoff"
                        )
                elif hi >= lo:
                    onset = int_rng.randint(lo, hi)

        if onset is not None:
            start = onset
            markers.append(Marker(start, MarkerKind.USER_ONSET))
            if u_len >= reaction and reaction > 0:
                cut = start + reaction
                canvas.cut_to_silence(cut, cursor_end)
                markers.append(Marker(cut, MarkerKind.CUTOFF))
                # at least one fully silent step between cutoff and answer
                answer_step = max(start + u_len, cut + 1)
            else:
                # too short to count as an interruption: overlay only
                answer_step = max(cursor_end + 1, start + u_len)
        else:
            gap = gap_rng.randint(*gap_range) if i > 0 else 0
            start = cursor_end + 1 + gap if i > 0 else 0
            markers.append(Marker(start, MarkerKind.USER_ONSET))
            answer_step = start + u_len

        for j, codes in enumerate(user.audio):
            canvas.set_listen(start + j, codes)

        if include_asr:
            canvas.set_text(answer_step, cfg.asr_begin_id, SupervisionClass.MONOLOGUE)
            for j, tok in enumerate(user.transcript):
                canvas.set_text(answer_step + 1 + j, tok, SupervisionClass.MONOLOGUE)
            answer_step = answer_step + 1 + len(user.transcript)
        canvas.set_text(answer_step, cfg.answer_id, SupervisionClass.MONOLOGUE)

        response_start = answer_step + 1
        t_len = len(model.transcript)
        a_len = len(model.audio)
        for j, tok in enumerate(model.transcript):
            canvas.set_text(response_start + j, tok, SupervisionClass.MONOLOGUE)
        for j, codes in enumerate(model.audio):
            canvas.set_semantic(response_start + lead + j, codes[0])
            canvas.set_acoustic(response_start + lead + delay + j, codes)
        speech_end = response_start + lead + delay + a_len - 1
        for step in range(response_start + t_len, speech_end + 1):
            canvas.set_text(step, cfg.wait_id, SupervisionClass.WAIT)

        prev_span = (response_start + lead, speech_end)
        turn_end = max(response_start + t_len - 1, speech_end)
        cursor_end = max(cursor_end, turn_end, start + u_len - 1)

    canvas.ensure(cursor_end + 1)
    return canvas.to_sequence(cfg, markers, script.dialog_id)


def build_asr_response_tts(script: DialogScript, cfg: StreamConfig, seed: int = 0) -> FrameSequence:
    """Semi-duplex layout with an explicit transcription span per user turn."""
    return _build(script, cfg, include_asr=True, policy=None, seed=seed)


def build_response_tts(script: DialogScript, cfg: StreamConfig, seed: int = 0) -> FrameSequence:
    """Semi-duplex layout responding directly to audio, no transcription."""
    return _build(script, cfg, include_asr=False, policy=None, seed=seed)


def inject_interruptions(
    script: DialogScript, policy: InterruptionPolicy, cfg: StreamConfig
) -> FrameSequence:
    """Full-duplex layout: user turns may barge into the prior response.

    Per model turn (except the last), with probability `p_interrupt` the
    following user turn's onset moves to a uniformly random step strictly
    inside the model's speaking span, excluding its final `reaction`
    frames so the cutoff stays observable. From onset + reaction frames
    the remaining speak codes turn empty and the remaining text turns to
    WAIT. User audio shorter than the reaction delay is treated as a
    back-channel and does not cut the response.
    """
    if len(script.turns) < 2:
        raise DialogError(f"{script.dialog_id!r}: need at least 2 turns")
    return _build(script, cfg, include_asr=False, policy=policy, seed=policy.seed)
