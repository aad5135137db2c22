"""Waveform-level augmentation for fine-tuning data.

Loudness is measured as dB = 20 * log10(rms + 1e-6). User utterances get
a random relative gain (probability 0.6, -24..+20 dB) with a -40 dB
floor on the result, plus an additive noise track built from pool clips
scaled into (-70, -40) dB, each clip independently replaced by silence
with probability 0.3. Separately, the model's own speech can leak back
into the listening channel (probability 0.3, gain 0..0.2, delay
0.1..0.5 s). Mixes are clipped to [-1, 1], never renormalized, so the
loudness floor keeps its meaning.

Every operation takes an explicit RNG, so corpus builds stay
reproducible; the *_traced variants additionally report which stochastic
branches fired, which is what the statistical verification hooks into.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .codec import Waveform

RMS_EPSILON = 1e-6
SILENCE_DB = 20.0 * math.log10(RMS_EPSILON)  # -120 dB, the measurable floor


class AugmentError(ValueError):
    pass


class SilentInputError(AugmentError):
    pass


@dataclass(frozen=True)
class AugmentSpec:
    """All stochastic augmentation parameters. Ranges are (low, high)."""

    p_gain: float = 0.6
    gain_db_range: tuple[float, float] = (-24.0, 20.0)
    min_loudness_db: float = -40.0
    noise_db_range: tuple[float, float] = (-70.0, -40.0)
    p_noise_silence: float = 0.3
    p_leakage: float = 0.3
    leakage_gain_range: tuple[float, float] = (0.0, 0.2)
    leakage_delay_range_s: tuple[float, float] = (0.1, 0.5)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("p_gain", "p_noise_silence", "p_leakage"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("gain_db_range", "noise_db_range", "leakage_gain_range", "leakage_delay_range_s"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered low <= high, got ({lo}, {hi})")

    def to_json(self) -> str:
        return json.dumps(
            {
                "p_gain": self.p_gain,
                "gain_db_range": list(self.gain_db_range),
                "min_loudness_db": self.min_loudness_db,
                "noise_db_range": list(self.noise_db_range),
                "p_noise_silence": self.p_noise_silence,
                "p_leakage": self.p_leakage,
                "leakage_gain_range": list(self.leakage_gain_range),
                "leakage_delay_range_s": list(self.leakage_delay_range_s),
                "seed": self.seed,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "AugmentSpec":
        raw = json.loads(text)
        kwargs = dict(raw)
        for name in ("gain_db_range", "noise_db_range", "leakage_gain_range", "leakage_delay_range_s"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return AugmentSpec(**kwargs)

    @staticmethod
    def load(path: str | Path) -> "AugmentSpec":
        return AugmentSpec.from_json(Path(path).read_text())


def rms_db(waveform: Waveform) -> float:
    """Loudness as 20 * log10(rms + 1e-6) over all samples."""
    if len(waveform) == 0:
        raise AugmentError("cannot measure loudness of an empty waveform")
    rms = float(np.sqrt(np.mean(np.square(waveform.samples))))
    return 20.0 * math.log10(rms + RMS_EPSILON)


def apply_gain_to_db(waveform: Waveform, target_db: float) -> Waveform:
    """Linearly rescale so the result measures `target_db`."""
    rms = float(np.sqrt(np.mean(np.square(waveform.samples)))) if len(waveform) else 0.0
    if rms <= 0.0:
        raise SilentInputError("cannot rescale a silent waveform")
    target_rms = 10.0 ** (target_db / 20.0) - RMS_EPSILON
    if target_rms < 0.0:
        raise AugmentError(f"target {target_db} dB is below the measurable floor")
    return Waveform(waveform.samples * (target_rms / rms), waveform.sample_rate_hz)


@dataclass(frozen=True)
class NoiseClipEvent:
    pool_index: int
    start_sample: int
    placed_samples: int
    target_db: float
    achieved_db: float
    silenced: bool


@dataclass
class AugmentTrace:
    """What the stochastic branches actually did for one utterance."""

    gain_applied: bool = False
    gain_shift_db: float | None = None
    pre_gain_db: float = 0.0
    post_gain_db: float = 0.0
    floored: bool = False
    noise_clips: list[NoiseClipEvent] = field(default_factory=list)


def _build_noise_track(
    length: int,
    noise_pool: Sequence[Waveform],
    spec: AugmentSpec,
    rng: np.random.Generator,
    sample_rate_hz: int,
) -> tuple[np.ndarray, list[NoiseClipEvent]]:
    if not noise_pool:
        raise AugmentError("noise pool is empty")
    track = np.zeros(length)
    events: list[NoiseClipEvent] = []
    pos = 0
    while pos < length:
        idx = int(rng.integers(0, len(noise_pool)))
        clip = noise_pool[idx]
        if clip.sample_rate_hz != sample_rate_hz:
            raise AugmentError(
                f"noise clip at {clip.sample_rate_hz} Hz does not match {sample_rate_hz} Hz"
            )
        target_db = float(rng.uniform(*spec.noise_db_range))
        silenced = bool(rng.random() < spec.p_noise_silence)
        if silenced or len(clip) == 0 or not np.any(clip.samples):
            scaled = np.zeros(max(len(clip), 1))
            achieved_db = SILENCE_DB
        else:
            scaled_wave = apply_gain_to_db(clip, target_db)
            scaled = scaled_wave.samples
            achieved_db = rms_db(scaled_wave)
        take = min(len(scaled), length - pos)
        track[pos : pos + take] = scaled[:take]
        events.append(NoiseClipEvent(idx, pos, take, target_db, achieved_db, silenced))
        pos += take
    return track, events


def augment_user_audio_traced(
    waveform: Waveform,
    noise_pool: Sequence[Waveform],
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> tuple[Waveform, AugmentTrace]:
    """Gain + loudness floor + additive noise, reporting what happened.

    Draw order per call: gain coin, gain shift (if the coin fired), then
    per noise clip: pool index, target dB, silence coin.
    """
    if len(waveform) == 0:
        raise AugmentError("cannot augment an empty waveform")
    trace = AugmentTrace(pre_gain_db=rms_db(waveform))
    samples = waveform.samples

    if rng.random() < spec.p_gain:
        trace.gain_applied = True
        shift = float(rng.uniform(*spec.gain_db_range))
        trace.gain_shift_db = shift
        shifted = apply_gain_to_db(waveform, trace.pre_gain_db + shift)
        if rms_db(shifted) < spec.min_loudness_db:
            shifted = apply_gain_to_db(shifted, spec.min_loudness_db)
            trace.floored = True
        samples = shifted.samples
        trace.post_gain_db = rms_db(shifted)
    else:
        trace.post_gain_db = trace.pre_gain_db

    noise, trace.noise_clips = _build_noise_track(
        len(samples), noise_pool, spec, rng, waveform.sample_rate_hz
    )
    mixed = np.clip(samples + noise, -1.0, 1.0)
    return Waveform(mixed, waveform.sample_rate_hz), trace


def augment_user_audio(
    waveform: Waveform,
    noise_pool: Sequence[Waveform],
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> Waveform:
    out, _ = augment_user_audio_traced(waveform, noise_pool, spec, rng)
    return out


@dataclass(frozen=True)
class LeakageTrace:
    applied: bool
    gain: float | None = None
    delay_s: float | None = None
    delay_samples: int | None = None


def speech_leakage_traced(
    listen: Waveform,
    speak: Waveform,
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> tuple[Waveform, LeakageTrace]:
    """Mix the speaking channel back into the listening channel.

    With probability `p_leakage` the speak waveform is attenuated by a
    uniform gain, delayed by a uniform number of whole samples (head
    padded with zeros), added to the listen track, and clipped. Draw
    order: coin, gain, delay.
    """
    if listen.sample_rate_hz != speak.sample_rate_hz:
        raise AugmentError("listen and speak sample rates differ")
    if not rng.random() < spec.p_leakage:
        return Waveform(listen.samples.copy(), listen.sample_rate_hz), LeakageTrace(applied=False)
    gain = float(rng.uniform(*spec.leakage_gain_range))
    delay_s = float(rng.uniform(*spec.leakage_delay_range_s))
    delay = int(math.floor(delay_s * listen.sample_rate_hz))
    shifted = np.zeros(len(listen))
    n = max(0, min(len(listen) - delay, len(speak)))
    if n > 0:
        shifted[delay : delay + n] = speak.samples[:n]
    mixed = np.clip(listen.samples + gain * shifted, -1.0, 1.0)
    return Waveform(mixed, listen.sample_rate_hz), LeakageTrace(True, gain, delay_s, delay)


def speech_leakage(
    listen: Waveform, speak: Waveform, spec: AugmentSpec, rng: np.random.Generator
) -> Waveform:
    out, _ = speech_leakage_traced(listen, speak, spec, rng)
    return out
