"""Waveform <-> audio-code bridge.

The neural codec used in production is external to this package; here the
same interface is satisfied by a deterministic pseudo-codec so that the
alignment, augmentation, and runtime stages can be exercised end to end
without model weights. Per 1920-sample hop the encoder computes 8
band-energy statistics from a real FFT and quantizes each through a fixed
monotone map into [0, 2048); ID 2048 stays reserved as the empty filler.
Decoding synthesizes one tone per band (fidelity is a non-goal).
"""

from __future__ import annotations

import wave as wave_module
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .frames import StreamConfig

CodeFrame = tuple[int, ...]

# rfft bin edges of the 8 analysis bands for a 1920-sample hop (12.5 Hz bins).
_BAND_EDGES = (0, 3, 7, 15, 31, 63, 127, 255, 961)
# Softness constant of the energy -> code compression curve.
_ENERGY_KNEE = 1e-3


class CodecError(ValueError):
    pass


class SampleRateError(CodecError):
    pass


class CodeRangeError(CodecError):
    pass


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    @staticmethod
    def silence(n_samples: int, sample_rate_hz: int) -> "Waveform":
        return Waveform(np.zeros(n_samples), sample_rate_hz)


class CodecInterface(Protocol):
    """Contract all waveform/token bridges satisfy.

    encode emits exactly floor(samples / hop) code frames of 8 codes each;
    decode emits hop_samples per frame. Implementations must be pure so
    they are safe for concurrent use on distinct streams.
    """

    def encode(self, waveform: Waveform, cfg: StreamConfig) -> list[CodeFrame]: ...

    def decode(self, frames: Sequence[CodeFrame], cfg: StreamConfig) -> Waveform: ...


def _band_energies(hop: np.ndarray) -> np.ndarray:
    spectrum = np.fft.rfft(hop)
    power = (spectrum.real**2 + spectrum.imag**2) / float(len(hop)) ** 2
    edges = _BAND_EDGES
    return np.array([power[lo:hi].sum() for lo, hi in zip(edges[:-1], edges[1:])])


def _quantize_energy(energy: float, levels: int) -> int:
    code = int(levels * energy / (energy + _ENERGY_KNEE))
    return min(code, levels - 1)


def _dequantize_energy(code: int, levels: int) -> float:
    if code <= 0:
        return 0.0
    return _ENERGY_KNEE * code / (levels - code) if code < levels else _ENERGY_KNEE * levels


class PseudoCodec:
    """Deterministic stand-in codec: band energies in, band tones out."""

    def encode(self, waveform: Waveform, cfg: StreamConfig) -> list[CodeFrame]:
        if waveform.sample_rate_hz != cfg.sample_rate_hz:
            raise SampleRateError(
                f"waveform at {waveform.sample_rate_hz} Hz, stream expects {cfg.sample_rate_hz} Hz"
            )
        hop = cfg.hop_samples
        levels = cfg.empty_audio_id  # codes occupy [0, 2048); 2048 stays empty
        n_hops = len(waveform.samples) // hop
        frames: list[CodeFrame] = []
        for k in range(n_hops):
            chunk = waveform.samples[k * hop : (k + 1) * hop]
            energies = _band_energies(chunk)
            frames.append(tuple(_quantize_energy(float(e), levels) for e in energies))
        return frames

    def decode(self, frames: Sequence[CodeFrame], cfg: StreamConfig) -> Waveform:
        hop = cfg.hop_samples
        levels = cfg.empty_audio_id
        edges = _BAND_EDGES
        # one synthesis tone per band, at the geometric-mean bin frequency
        t = np.arange(hop) / cfg.sample_rate_hz
        out = np.zeros(len(frames) * hop)
        for i, frame in enumerate(frames):
            if len(frame) != cfg.num_codebooks:
                raise CodeRangeError(f"frame {i} has {len(frame)} codes, expected {cfg.num_codebooks}")
            chunk = np.zeros(hop)
            for band, code in enumerate(frame):
                if not 0 <= code < cfg.audio_vocab_size:
                    raise CodeRangeError(f"code {code} out of range at frame {i} codebook {band}")
                if code == cfg.empty_audio_id or code == 0:
                    continue
                lo = max(edges[band], 1)
                hi = max(edges[band + 1] - 1, lo)
                freq = float(np.sqrt(lo * hi)) * (cfg.sample_rate_hz / hop)
                amplitude = 2.0 * float(np.sqrt(_dequantize_energy(code, levels)))
                chunk = chunk + amplitude * np.cos(2 * np.pi * freq * t)
            out[i * hop : (i + 1) * hop] = np.clip(chunk, -1.0, 1.0)
        return Waveform(out, cfg.sample_rate_hz)


class StreamingEncoder:
    """Hop-buffering wrapper so callers can push arbitrary chunk sizes."""

    def __init__(self, codec: CodecInterface, cfg: StreamConfig):
        self.codec = codec
        self.cfg = cfg
        self._buffer = np.zeros(0)

    def push(self, samples: np.ndarray) -> list[CodeFrame]:
        self._buffer = np.concatenate([self._buffer, np.asarray(samples, dtype=np.float64)])
        hop = self.cfg.hop_samples
        n_hops = len(self._buffer) // hop
        if not n_hops:
            return []
        ready, self._buffer = self._buffer[: n_hops * hop], self._buffer[n_hops * hop :]
        return self.codec.encode(Waveform(ready, self.cfg.sample_rate_hz), self.cfg)

    @property
    def pending_samples(self) -> int:
        return len(self._buffer)


def empty_code_frame(cfg: StreamConfig) -> CodeFrame:
    return (cfg.empty_audio_id,) * cfg.num_codebooks


def is_empty_code_frame(frame: Sequence[int], cfg: StreamConfig) -> bool:
    return all(c == cfg.empty_audio_id for c in frame)


# ---------------------------------------------------------------------------
# WAV ingestion (16-bit PCM mono only; resampling is out of scope)
# ---------------------------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    with wave_module.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise CodecError(f"{path}: only mono WAV is supported ({wf.getnchannels()} channels)")
        if wf.getsampwidth() != 2:
            raise CodecError(f"{path}: only 16-bit PCM is supported ({wf.getsampwidth() * 8}-bit)")
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave_module.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate_hz)
        wf.writeframes(pcm.tobytes())
