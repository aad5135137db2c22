"""Streaming duplex inference loop over a pluggable step model.

The engine consumes exactly one listening frame per step and emits
exactly one merged output frame, driving the model through a fixed
three-phase protocol: one ingest of the merged previous-step frame, one
text decode, then eight speak-code decodes in codebook order, each seeing
only the current step's handle plus the codes already decoded this step.

A turn-taking state machine rides on top: user activity sustained through
the reaction delay while the stream is responding forces a cutoff (speak
codes to empty, text to WAIT) and is recorded as a marker, mirroring how
the training streams are built. Real-time mode paces steps by absolute
deadlines (step k due at t0 + k * 80 ms) so timing error does not
accumulate.

Neural inference is out of scope: the shipped models replay scripts or
echo the listening channel, which is enough to verify the engine.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator, Protocol

import numpy as np

from .augment import rms_db
from .codec import CodeFrame, CodecInterface, PseudoCodec, Waveform, empty_code_frame
from .frames import (
    Frame,
    FrameSequence,
    Marker,
    MarkerKind,
    StreamConfig,
    classify_slots,
)


class ModelProtocolError(RuntimeError):
    """The model broke the step protocol; `step` names the failing step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class DuplexModel(Protocol):
    """Contract a (mock or real) duplex step model must satisfy.

    Per step the engine calls `ingest` once with the merged frame (its own
    previous text and speak outputs plus the new listening codes), then
    `next_text` once, then `next_speak_code` eight times. Speak decoding
    must depend only on the step handle and the codes already decoded
    this step, never on future input.
    """

    def ingest(self, frame: Frame) -> Any: ...

    def next_text(self, handle: Any) -> int: ...

    def next_speak_code(self, handle: Any, decoded: tuple[int, ...]) -> int: ...


class Mode(Enum):
    LISTENING = "listening"
    RESPONDING = "responding"
    SPEAKING = "speaking"
    WAIT_FILL = "wait_fill"
    INTERRUPTED = "interrupted"


@dataclass
class RuntimePolicy:
    realtime: bool = False
    reaction_delay_s: float = 0.5
    energy_gate_db: float = -40.0  # wave-driven activity threshold


@dataclass
class DuplexState:
    """Mutable per-session engine state."""

    mode: Mode = Mode.LISTENING
    steps_since_user_onset: int = -1
    pending_text: deque = field(default_factory=deque)
    step: int = 0
    prev_text: int = 0
    prev_speak: tuple[int, ...] = ()
    onset_step: int | None = None
    mode_at_onset: Mode = Mode.LISTENING
    active_run: int = 0
    cutoff_at: int | None = None

    @staticmethod
    def initial(cfg: StreamConfig) -> "DuplexState":
        return DuplexState(prev_text=cfg.bos_id, prev_speak=empty_code_frame(cfg))


def user_activity(codes: CodeFrame, cfg: StreamConfig) -> bool:
    return any(c != cfg.empty_audio_id for c in codes)


def step_once(
    model: DuplexModel,
    state: DuplexState,
    in_codes: CodeFrame,
    cfg: StreamConfig,
    policy: RuntimePolicy | None = None,
    active: bool | None = None,
) -> tuple[Frame, list[Marker]]:
    """Advance the stream by one frame; mutates `state` in place.

    Returns the merged output frame and any turn-taking markers emitted
    at this step. `active` overrides code-based user-activity detection
    (wave-driven sessions use an energy gate instead).
    """
    policy = policy or RuntimePolicy()
    t = state.step
    reaction = round(policy.reaction_delay_s * float(cfg.frame_rate_hz))
    in_codes = tuple(in_codes)
    if len(in_codes) != cfg.num_codebooks:
        raise ModelProtocolError(f"input frame has {len(in_codes)} codes", t)

    in_frame = Frame(state.prev_text, in_codes, state.prev_speak)
    handle = model.ingest(in_frame)
    text = model.next_text(handle)
    if not isinstance(text, int) or not 0 <= text < cfg.text_vocab_size:
        raise ModelProtocolError(f"text token {text!r} out of range", t)
    codes: list[int] = []
    for _ in range(cfg.num_codebooks):
        code = model.next_speak_code(handle, tuple(codes))
        if not isinstance(code, int) or not 0 <= code < cfg.audio_vocab_size:
            raise ModelProtocolError(f"speak code {code!r} out of range", t)
        codes.append(code)

    if state.pending_text and state.mode in (Mode.RESPONDING, Mode.SPEAKING):
        text = state.pending_text.popleft()

    markers: list[Marker] = []
    is_active = user_activity(in_codes, cfg) if active is None else active
    if is_active:
        if state.active_run == 0:
            state.onset_step = t
            state.mode_at_onset = state.mode
            markers.append(Marker(t, MarkerKind.USER_ONSET))
        state.active_run += 1
        state.steps_since_user_onset = t - state.onset_step
    else:
        state.active_run = 0
        if state.mode == Mode.INTERRUPTED:
            state.mode = Mode.LISTENING

    # Sustained user speech over an active response schedules a cutoff at
    # onset + reaction delay, matching the built training streams.
    if (
        reaction > 0
        and state.active_run == reaction
        and state.mode_at_onset not in (Mode.LISTENING, Mode.INTERRUPTED)
        and state.mode != Mode.INTERRUPTED
    ):
        state.cutoff_at = state.onset_step + reaction
    if state.cutoff_at is not None and t >= state.cutoff_at and state.mode != Mode.INTERRUPTED:
        state.mode = Mode.INTERRUPTED
        markers.append(Marker(t, MarkerKind.CUTOFF))
        state.cutoff_at = None

    if state.mode == Mode.INTERRUPTED:
        text = cfg.wait_id
        codes = list(empty_code_frame(cfg))
    else:
        speaking_now = codes[0] != cfg.empty_audio_id
        any_speech = any(c != cfg.empty_audio_id for c in codes)
        if text == cfg.answer_id:
            state.mode = Mode.RESPONDING
        elif state.mode == Mode.RESPONDING and speaking_now:
            state.mode = Mode.SPEAKING
        elif state.mode == Mode.SPEAKING and text == cfg.wait_id:
            state.mode = Mode.WAIT_FILL
        elif state.mode in (Mode.SPEAKING, Mode.WAIT_FILL) and not any_speech:
            state.mode = Mode.LISTENING

    out = Frame(text, in_codes, tuple(codes))
    state.prev_text = text
    state.prev_speak = tuple(codes)
    state.step += 1
    return out, markers


@dataclass
class LatencyReport:
    """Timing and turn-taking observations for one session."""

    steps: int = 0
    wall_s: float = 0.0
    realtime: bool = False
    step_period_ms: list[float] = field(default_factory=list)
    response_start_step: int | None = None
    first_speech_step: int | None = None
    cutoff_latency_steps: list[int] = field(default_factory=list)

    @property
    def first_speech_latency_steps(self) -> int | None:
        if self.response_start_step is None or self.first_speech_step is None:
            return None
        return self.first_speech_step - self.response_start_step

    @property
    def mean_step_period_ms(self) -> float | None:
        if not self.step_period_ms:
            return None
        return float(np.mean(self.step_period_ms))

    @property
    def max_step_period_ms(self) -> float | None:
        if not self.step_period_ms:
            return None
        return float(np.max(self.step_period_ms))


def _as_frame_stream(
    listen_source: Iterable[CodeFrame] | Waveform,
    cfg: StreamConfig,
    policy: RuntimePolicy,
    codec: CodecInterface | None,
) -> Iterator[tuple[CodeFrame, bool | None]]:
    if isinstance(listen_source, Waveform):
        codec = codec or PseudoCodec()
        hop = cfg.hop_samples
        n_hops = len(listen_source.samples) // hop
        for k in range(n_hops):
            chunk = listen_source.samples[k * hop : (k + 1) * hop]
            frame = codec.encode(Waveform(chunk, cfg.sample_rate_hz), cfg)[0]
            active = rms_db(Waveform(chunk, cfg.sample_rate_hz)) > policy.energy_gate_db
            yield frame, active
    else:
        for codes in listen_source:
            yield tuple(codes), None


def run(
    model: DuplexModel,
    listen_source: Iterable[CodeFrame] | Waveform,
    cfg: StreamConfig,
    policy: RuntimePolicy | None = None,
    codec: CodecInterface | None = None,
) -> tuple[FrameSequence, LatencyReport]:
    """Drive a full session: one output frame per input frame.

    The input stream is consumed strictly one frame per step (the engine
    never reads ahead). In real-time mode each step waits for its
    absolute deadline before running.
    """
    policy = policy or RuntimePolicy()
    state = DuplexState.initial(cfg)
    report = LatencyReport(realtime=policy.realtime)
    frames: list[Frame] = []
    markers: list[Marker] = []
    sup_rows: list[np.ndarray] = []

    period = cfg.frame_period_s
    t_start = time.perf_counter()
    prev_step_start: float | None = None
    answer_seen = False

    for codes, active in _as_frame_stream(listen_source, cfg, policy, codec):
        if policy.realtime:
            deadline = t_start + state.step * period
            delay = deadline - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        now = time.perf_counter()
        if prev_step_start is not None:
            report.step_period_ms.append((now - prev_step_start) * 1000.0)
        prev_step_start = now

        step_index = state.step
        out, step_markers = step_once(model, state, codes, cfg, policy, active=active)
        frames.append(out)
        markers.extend(step_markers)
        sup_rows.append(classify_slots(out, cfg))

        if out.text == cfg.answer_id:
            answer_seen = True
        elif (
            answer_seen
            and report.response_start_step is None
            and out.text < cfg.text_vocab_base
        ):
            report.response_start_step = step_index
        if report.first_speech_step is None and out.speak[0] != cfg.empty_audio_id:
            report.first_speech_step = step_index
        for marker in step_markers:
            if marker.kind == MarkerKind.CUTOFF and state.onset_step is not None:
                report.cutoff_latency_steps.append(marker.step - state.onset_step)

    report.steps = len(frames)
    report.wall_s = time.perf_counter() - t_start
    sup = np.array(sup_rows, dtype=np.uint8) if sup_rows else None
    seq = FrameSequence(cfg, frames, sup, markers, source_id="session")
    return seq, report


# ---------------------------------------------------------------------------
# Mock models
# ---------------------------------------------------------------------------


class ScriptedModel:
    """Replays a prebuilt stream: step t emits the script's frame t.

    Past the end of the script it falls back to WAIT text and empty speak
    codes, so a session may run longer than its script.
    """

    def __init__(self, script: FrameSequence):
        self.script = script
        self.cfg = script.config
        self._step = -1

    def ingest(self, frame: Frame) -> int:
        self._step += 1
        return self._step

    def next_text(self, handle: int) -> int:
        if handle < len(self.script.frames):
            return self.script.frames[handle].text
        return self.cfg.wait_id

    def next_speak_code(self, handle: int, decoded: tuple[int, ...]) -> int:
        if handle < len(self.script.frames):
            return self.script.frames[handle].speak[len(decoded)]
        return self.cfg.empty_audio_id


class EchoModel:
    """Diagnostic model: speak codes echo the listening codes N steps late."""

    def __init__(self, cfg: StreamConfig, delay_steps: int = 2):
        self.cfg = cfg
        self.delay_steps = delay_steps
        self._history: list[CodeFrame] = []

    def ingest(self, frame: Frame) -> int:
        self._history.append(frame.listen)
        return len(self._history) - 1

    def next_text(self, handle: int) -> int:
        return self.cfg.wait_id

    def next_speak_code(self, handle: int, decoded: tuple[int, ...]) -> int:
        src = handle - self.delay_steps
        if src < 0:
            return self.cfg.empty_audio_id
        return self._history[src][len(decoded)]


class RecordingModel:
    """Wraps a model and records the call trace (protocol verification)."""

    def __init__(self, inner: DuplexModel):
        self.inner = inner
        self.trace: list[str] = []

    def ingest(self, frame: Frame) -> Any:
        self.trace.append("ingest")
        return self.inner.ingest(frame)

    def next_text(self, handle: Any) -> int:
        self.trace.append("next_text")
        return self.inner.next_text(handle)

    def next_speak_code(self, handle: Any, decoded: tuple[int, ...]) -> int:
        self.trace.append("next_speak_code")
        return self.inner.next_speak_code(handle, decoded)
