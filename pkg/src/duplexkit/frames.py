"""Multi-channel frame model shared by every stage of the pipeline.

One frame covers one 80 ms step of a duplex stream and carries 17 token
slots: 1 text token, 8 listening audio codes, and 8 speaking audio codes.
Sequences of frames, together with per-slot supervision labels and event
markers, are the unit of both training data and runtime history.

The module also owns the binary frame-file format (magic ``FDSE``) and the
structural validator used by dataset verification.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

# Slot layout of one frame: text, listen[0..8), speak[0..8).
SLOTS_PER_FRAME = 17
TEXT_POS = 0
LISTEN_POS = slice(1, 9)
SPEAK_POS = slice(9, 17)
SEMANTIC_POS = 9  # speak codebook 0
ACOUSTIC_POS = slice(10, 17)  # speak codebooks 1..7

# Special text tokens, appended above the base vocabulary in this order.
N_SPECIAL_TEXT = 5
WAIT_OFFSET = 0
ASR_BEGIN_OFFSET = 1
ANSWER_OFFSET = 2
PAD_OFFSET = 3
BOS_OFFSET = 4


class StreamConfigError(ValueError):
    """A StreamConfig violates one of its structural invariants."""


@dataclass(frozen=True)
class StreamConfig:
    """Static parameters of a duplex token stream.

    The defaults describe the production stream: 12.5 frames per second at
    24 kHz (1920 samples per hop), 8 audio codebooks with 2049 IDs each
    (2048 is the empty filler), text leading speech by 2 steps and the
    acoustic codebooks trailing the semantic one by 1 step.
    """

    frame_rate_hz: Fraction = Fraction(25, 2)
    num_codebooks: int = 8
    audio_vocab_size: int = 2049
    text_vocab_base: int = 32000
    sample_rate_hz: int = 24000
    hop_samples: int = 1920
    max_seq_len: int = 8192
    text_lead_steps: int = 2
    acoustic_delay_steps: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "frame_rate_hz", Fraction(self.frame_rate_hz))
        if self.hop_samples * self.frame_rate_hz != self.sample_rate_hz:
            raise StreamConfigError(
                f"hop_samples * frame_rate must equal sample_rate: "
                f"{self.hop_samples} * {self.frame_rate_hz} != {self.sample_rate_hz}"
            )
        if self.audio_vocab_size < 2:
            raise StreamConfigError("audio_vocab_size must be >= 2")
        if self.text_vocab_base < 1:
            raise StreamConfigError("text_vocab_base must be >= 1")
        if self.num_codebooks != 8:
            raise StreamConfigError("frame layout is fixed at 8 codebooks")
        if self.text_lead_steps < 0:
            raise StreamConfigError("text_lead_steps must be >= 0")
        if self.acoustic_delay_steps not in (0, 1):
            raise StreamConfigError("acoustic_delay_steps must be 0 or 1")
        if self.max_seq_len < 1:
            raise StreamConfigError("max_seq_len must be >= 1")

    @property
    def empty_audio_id(self) -> int:
        return self.audio_vocab_size - 1

    @property
    def text_vocab_size(self) -> int:
        return self.text_vocab_base + N_SPECIAL_TEXT

    @property
    def wait_id(self) -> int:
        return self.text_vocab_base + WAIT_OFFSET

    @property
    def asr_begin_id(self) -> int:
        return self.text_vocab_base + ASR_BEGIN_OFFSET

    @property
    def answer_id(self) -> int:
        return self.text_vocab_base + ANSWER_OFFSET

    @property
    def pad_id(self) -> int:
        return self.text_vocab_base + PAD_OFFSET

    @property
    def bos_id(self) -> int:
        return self.text_vocab_base + BOS_OFFSET

    @property
    def frame_period_s(self) -> float:
        return float(1 / self.frame_rate_hz)

    def frames_for_seconds(self, seconds: float) -> int:
        """Number of whole frames covering `seconds`, rounded to nearest."""
        return round(seconds * float(self.frame_rate_hz))


class SupervisionClass(IntEnum):
    """Which loss term (if any) a token slot contributes to."""

    UNSUPERVISED = 0
    SPEAK_SEMANTIC = 1
    SPEAK_ACOUSTIC = 2
    MONOLOGUE = 3
    WAIT = 4


class MarkerKind(IntEnum):
    SENTENCE_START = 0
    SENTENCE_END = 1
    USER_ONSET = 2
    CUTOFF = 3


class Marker(NamedTuple):
    step: int
    kind: MarkerKind


@dataclass(frozen=True)
class Frame:
    """One 80 ms timestep: a text token plus 8 listen and 8 speak codes."""

    text: int
    listen: tuple[int, ...]
    speak: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "listen", tuple(self.listen))
        object.__setattr__(self, "speak", tuple(self.speak))

    @staticmethod
    def filler(cfg: StreamConfig) -> "Frame":
        """All-empty audio with a WAIT text token (silent gap frame)."""
        empty = (cfg.empty_audio_id,) * cfg.num_codebooks
        return Frame(cfg.wait_id, empty, empty)

    @staticmethod
    def padding(cfg: StreamConfig) -> "Frame":
        """All-empty audio with a PAD text token (pack tail frame)."""
        empty = (cfg.empty_audio_id,) * cfg.num_codebooks
        return Frame(cfg.pad_id, empty, empty)

    def slots(self) -> tuple[int, ...]:
        return (self.text,) + self.listen + self.speak


def unsupervised_labels(n_frames: int) -> np.ndarray:
    """Fresh (n, 17) supervision array, everything unsupervised."""
    return np.zeros((n_frames, SLOTS_PER_FRAME), dtype=np.uint8)


@dataclass
class FrameSequence:
    """An ordered run of frames plus supervision labels and event markers.

    `supervision` has shape (len(frames), 17) and mirrors the slot layout
    of each frame. Listening slots are never supervised. `markers` records
    stream events (sentence boundaries, user onsets, interruption cutoffs)
    sorted by step.
    """

    config: StreamConfig
    frames: list[Frame] = field(default_factory=list)
    supervision: np.ndarray = None  # type: ignore[assignment]
    markers: list[Marker] = field(default_factory=list)
    source_id: str | None = None

    def __post_init__(self) -> None:
        if self.supervision is None:
            self.supervision = unsupervised_labels(len(self.frames))
        self.supervision = np.asarray(self.supervision, dtype=np.uint8)
        self.markers = [Marker(int(s), MarkerKind(k)) for s, k in self.markers]

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return (
            self.config == other.config
            and self.frames == other.frames
            and self.supervision.shape == other.supervision.shape
            and bool(np.array_equal(self.supervision, other.supervision))
            and self.markers == other.markers
        )

    def tokens_array(self) -> np.ndarray:
        """All token IDs as a (n, 17) uint32 array (text, listen, speak)."""
        if not self.frames:
            return np.zeros((0, SLOTS_PER_FRAME), dtype=np.uint32)
        flat = [f.slots() for f in self.frames]
        return np.array(flat, dtype=np.uint32)

    def duration_s(self) -> float:
        return len(self.frames) * self.config.frame_period_s


def classify_slots(frame: Frame, cfg: StreamConfig) -> np.ndarray:
    """Supervision classes implied by a frame's content alone.

    Ordinary text and the transcription/answer delimiters are monologue,
    WAIT is wait, PAD/BOS are unsupervised, and speak codes are supervised
    only where non-empty (semantic for codebook 0, acoustic for the rest).
    Listening slots are never supervised. Stream builders follow the same
    rule, which is what lets a replayed session reproduce their labels.
    """
    row = np.zeros(SLOTS_PER_FRAME, dtype=np.uint8)
    if frame.text == cfg.wait_id:
        row[TEXT_POS] = SupervisionClass.WAIT
    elif frame.text in (cfg.pad_id, cfg.bos_id):
        row[TEXT_POS] = SupervisionClass.UNSUPERVISED
    else:
        row[TEXT_POS] = SupervisionClass.MONOLOGUE
    if frame.speak and frame.speak[0] != cfg.empty_audio_id:
        row[SEMANTIC_POS] = SupervisionClass.SPEAK_SEMANTIC
    for cb, code in enumerate(frame.speak[1:], start=1):
        if code != cfg.empty_audio_id:
            row[SEMANTIC_POS + cb] = SupervisionClass.SPEAK_ACOUSTIC
    return row


# ---------------------------------------------------------------------------
# Binary frame-file format
# ---------------------------------------------------------------------------

FRAME_FILE_MAGIC = b"FDSE"
FRAME_FILE_VERSION = 1

_HEADER = struct.Struct("<4sH")
_CONFIG_BLOCK = struct.Struct("<10I")
_FRAME_COUNT = struct.Struct("<Q")
_MARKER_COUNT = struct.Struct("<I")
_MARKER_ENTRY = struct.Struct("<QB")


class FrameFileError(ValueError):
    """Base class for frame-file parsing failures."""


class BadMagicError(FrameFileError):
    pass


class VersionMismatchError(FrameFileError):
    pass


class TruncatedPayloadError(FrameFileError):
    def __init__(self, message: str, frame_index: int | None = None):
        super().__init__(message)
        self.frame_index = frame_index


class TokenRangeError(FrameFileError):
    def __init__(self, message: str, frame_index: int, slot: int):
        super().__init__(message)
        self.frame_index = frame_index
        self.slot = slot


def _pack_config(cfg: StreamConfig) -> bytes:
    return _CONFIG_BLOCK.pack(
        cfg.frame_rate_hz.numerator,
        cfg.frame_rate_hz.denominator,
        cfg.num_codebooks,
        cfg.audio_vocab_size,
        cfg.text_vocab_base,
        cfg.sample_rate_hz,
        cfg.hop_samples,
        cfg.max_seq_len,
        cfg.text_lead_steps,
        cfg.acoustic_delay_steps,
    )


def _unpack_config(blob: bytes) -> StreamConfig:
    (num, den, ncb, avs, tvb, sr, hop, msl, lead, ad) = _CONFIG_BLOCK.unpack(blob)
    try:
        return StreamConfig(
            frame_rate_hz=Fraction(num, den),
            num_codebooks=ncb,
            audio_vocab_size=avs,
            text_vocab_base=tvb,
            sample_rate_hz=sr,
            hop_samples=hop,
            max_seq_len=msl,
            text_lead_steps=lead,
            acoustic_delay_steps=ad,
        )
    except (StreamConfigError, ZeroDivisionError) as exc:
        raise FrameFileError(f"invalid stream config block: {exc}") from exc


def serialize_frames(seq: FrameSequence) -> bytes:
    """Encode a sequence into the binary frame-file format.

    Layout: magic, version u16, config block (10 x u32, frame rate as a
    numerator/denominator pair), frame count u64, all token IDs (17 x u32
    per frame), all supervision labels (17 x u8 per frame), then the
    marker table (count u32; entries step u64 + kind u8).
    """
    parts = [
        _HEADER.pack(FRAME_FILE_MAGIC, FRAME_FILE_VERSION),
        _pack_config(seq.config),
        _FRAME_COUNT.pack(len(seq.frames)),
        seq.tokens_array().astype("<u4").tobytes(),
        np.ascontiguousarray(seq.supervision, dtype=np.uint8).tobytes(),
        _MARKER_COUNT.pack(len(seq.markers)),
    ]
    for marker in seq.markers:
        parts.append(_MARKER_ENTRY.pack(marker.step, int(marker.kind)))
    return b"".join(parts)


def deserialize_frames(data: bytes) -> FrameSequence:
    """Decode a frame file, validating magic, version, and token ranges."""
    if len(data) < _HEADER.size or data[:4] != FRAME_FILE_MAGIC:
        raise BadMagicError("not a frame file (bad magic)")
    (_, version) = _HEADER.unpack_from(data, 0)
    if version != FRAME_FILE_VERSION:
        raise VersionMismatchError(f"unsupported frame-file version {version}")
    off = _HEADER.size

    if len(data) < off + _CONFIG_BLOCK.size + _FRAME_COUNT.size:
        raise TruncatedPayloadError("truncated before frame count")
    cfg = _unpack_config(data[off : off + _CONFIG_BLOCK.size])
    off += _CONFIG_BLOCK.size
    (n_frames,) = _FRAME_COUNT.unpack_from(data, off)
    off += _FRAME_COUNT.size

    tok_bytes = n_frames * SLOTS_PER_FRAME * 4
    if len(data) < off + tok_bytes:
        failing = (len(data) - off) // (SLOTS_PER_FRAME * 4)
        raise TruncatedPayloadError(
            f"token payload truncated at frame {failing} of {n_frames}",
            frame_index=failing,
        )
    tokens = np.frombuffer(data, dtype="<u4", count=n_frames * SLOTS_PER_FRAME, offset=off)
    tokens = tokens.reshape(n_frames, SLOTS_PER_FRAME)
    off += tok_bytes

    sup_bytes = n_frames * SLOTS_PER_FRAME
    if len(data) < off + sup_bytes:
        failing = (len(data) - off) // SLOTS_PER_FRAME
        raise TruncatedPayloadError(
            f"supervision payload truncated at frame {failing} of {n_frames}",
            frame_index=failing,
        )
    supervision = np.frombuffer(data, dtype=np.uint8, count=sup_bytes, offset=off)
    supervision = supervision.reshape(n_frames, SLOTS_PER_FRAME).copy()
    off += sup_bytes

    if len(data) < off + _MARKER_COUNT.size:
        raise TruncatedPayloadError("marker table truncated")
    (n_markers,) = _MARKER_COUNT.unpack_from(data, off)
    off += _MARKER_COUNT.size
    if len(data) < off + n_markers * _MARKER_ENTRY.size:
        raise TruncatedPayloadError("marker entries truncated")
    markers = []
    for _ in range(n_markers):
        step, kind = _MARKER_ENTRY.unpack_from(data, off)
        off += _MARKER_ENTRY.size
        try:
            markers.append(Marker(step, MarkerKind(kind)))
        except ValueError as exc:
            raise FrameFileError(f"unknown marker kind {kind}") from exc

    _check_token_ranges(tokens, cfg)
    bad = supervision[supervision >= len(SupervisionClass)]
    if bad.size:
        raise FrameFileError(f"unknown supervision class value {int(bad[0])}")

    frames = [
        Frame(int(row[TEXT_POS]), tuple(int(x) for x in row[LISTEN_POS]), tuple(int(x) for x in row[SPEAK_POS]))
        for row in tokens
    ]
    return FrameSequence(config=cfg, frames=frames, supervision=supervision, markers=markers)


def _check_token_ranges(tokens: np.ndarray, cfg: StreamConfig) -> None:
    if tokens.size == 0:
        return
    text_bad = np.nonzero(tokens[:, TEXT_POS] >= cfg.text_vocab_size)[0]
    if text_bad.size:
        idx = int(text_bad[0])
        raise TokenRangeError(
            f"text token {int(tokens[idx, TEXT_POS])} out of range at frame {idx}",
            frame_index=idx,
            slot=TEXT_POS,
        )
    audio = tokens[:, 1:]
    audio_bad = np.argwhere(audio >= cfg.audio_vocab_size)
    if audio_bad.size:
        fi, slot = (int(audio_bad[0][0]), int(audio_bad[0][1]) + 1)
        raise TokenRangeError(
            f"audio code {int(tokens[fi, slot])} out of range at frame {fi} slot {slot}",
            frame_index=fi,
            slot=slot,
        )


def save_frames(path: str | Path, seq: FrameSequence) -> None:
    Path(path).write_bytes(serialize_frames(seq))


def load_frames(path: str | Path) -> FrameSequence:
    return deserialize_frames(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Structural validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    frame: int | None
    channel: str
    rule: str

    def __str__(self) -> str:
        where = "sequence" if self.frame is None else f"frame {self.frame}"
        return f"{where}/{self.channel}: {self.rule}"


def validate(seq: FrameSequence) -> list[Violation]:
    """Check every structural invariant; returns one entry per violation."""
    cfg = seq.config
    out: list[Violation] = []
    n = len(seq.frames)

    if seq.supervision.shape != (n, SLOTS_PER_FRAME):
        out.append(
            Violation(None, "supervision", f"shape {seq.supervision.shape} != ({n}, {SLOTS_PER_FRAME})")
        )
    if n > cfg.max_seq_len:
        out.append(Violation(None, "frames", f"length {n} exceeds max_seq_len {cfg.max_seq_len}"))

    for i, frame in enumerate(seq.frames):
        if len(frame.listen) != cfg.num_codebooks:
            out.append(Violation(i, "listen", f"expected {cfg.num_codebooks} codes, got {len(frame.listen)}"))
        if len(frame.speak) != cfg.num_codebooks:
            out.append(Violation(i, "speak", f"expected {cfg.num_codebooks} codes, got {len(frame.speak)}"))
        if not 0 <= frame.text < cfg.text_vocab_size:
            out.append(Violation(i, "text", f"token {frame.text} outside [0, {cfg.text_vocab_size})"))
        for name, codes in (("listen", frame.listen), ("speak", frame.speak)):
            for code in codes:
                if not 0 <= code < cfg.audio_vocab_size:
                    out.append(Violation(i, name, f"code {code} outside [0, {cfg.audio_vocab_size})"))
                    break

    if seq.supervision.shape == (n, SLOTS_PER_FRAME) and n:
        bad_class = np.argwhere(seq.supervision >= len(SupervisionClass))
        for fi, slot in bad_class[:8]:
            out.append(Violation(int(fi), f"slot {int(slot)}", f"unknown class {int(seq.supervision[fi, slot])}"))
        listen_sup = seq.supervision[:, LISTEN_POS]
        bad_listen = np.argwhere(listen_sup != SupervisionClass.UNSUPERVISED)
        for fi, j in bad_listen[:8]:
            out.append(
                Violation(int(fi), f"listen[{int(j)}]", "listening slots must be unsupervised")
            )

    steps = [m.step for m in seq.markers]
    if steps != sorted(steps):
        out.append(Violation(None, "markers", "marker steps not sorted"))
    for m in seq.markers:
        if n and not 0 <= m.step < n:
            out.append(Violation(None, "markers", f"marker step {m.step} outside sequence"))

    return out
