"""Human-readable configuration file (INI sections mirroring each policy).

All stream and augmentation constants default to the production recipe;
a config file overrides any subset, which is how desk-scale test runs
shrink pack lengths or vocabularies without touching code.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .align import PackingPolicy
from .augment import AugmentSpec
from .dialog import InterruptionPolicy
from .frames import StreamConfig


@dataclass(frozen=True)
class RunConfig:
    stream: StreamConfig
    packing: PackingPolicy
    augment: AugmentSpec
    interruption: InterruptionPolicy


def default_config_text() -> str:
    return """\
[stream]
frame_rate_hz = 25/2
num_codebooks = 8
audio_vocab_size = 2049
text_vocab_base = 32000
sample_rate_hz = 24000
hop_samples = 1920
max_seq_len = 8192
text_lead_steps = 2
acoustic_delay_steps = 1

[packing]
gap_min_frames = 3
gap_max_frames = 13
target_len = 8192

[augment]
p_gain = 0.6
gain_db_low = -24
gain_db_high = 20
min_loudness_db = -40
noise_db_low = -70
noise_db_high = -40
p_noise_silence = 0.3
p_leakage = 0.3
leakage_gain_low = 0
leakage_gain_high = 0.2
leakage_delay_low_s = 0.1
leakage_delay_high_s = 0.5

[interruption]
p_interrupt = 0.7
reaction_delay_s = 0.5
"""


def _get(parser: configparser.ConfigParser, section: str, key: str, cast, default):
    if parser.has_option(section, key):
        raw = parser.get(section, key)
        return cast(raw)
    return default


def load_config(path: str | Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_string(default_config_text())
    if path is not None:
        read = parser.read(str(path))
        if not read:
            raise FileNotFoundError(f"config file {path} not found")

    stream = StreamConfig(
        frame_rate_hz=Fraction(parser.get("stream", "frame_rate_hz")),
        num_codebooks=parser.getint("stream", "num_codebooks"),
        audio_vocab_size=parser.getint("stream", "audio_vocab_size"),
        text_vocab_base=parser.getint("stream", "text_vocab_base"),
        sample_rate_hz=parser.getint("stream", "sample_rate_hz"),
        hop_samples=parser.getint("stream", "hop_samples"),
        max_seq_len=parser.getint("stream", "max_seq_len"),
        text_lead_steps=parser.getint("stream", "text_lead_steps"),
        acoustic_delay_steps=parser.getint("stream", "acoustic_delay_steps"),
    )
    packing = PackingPolicy(
        gap_min_frames=parser.getint("packing", "gap_min_frames"),
        gap_max_frames=parser.getint("packing", "gap_max_frames"),
        target_len=parser.getint("packing", "target_len"),
    )
    augment = AugmentSpec(
        p_gain=parser.getfloat("augment", "p_gain"),
        gain_db_range=(
            parser.getfloat("augment", "gain_db_low"),
            parser.getfloat("augment", "gain_db_high"),
        ),
        min_loudness_db=parser.getfloat("augment", "min_loudness_db"),
        noise_db_range=(
            parser.getfloat("augment", "noise_db_low"),
            parser.getfloat("augment", "noise_db_high"),
        ),
        p_noise_silence=parser.getfloat("augment", "p_noise_silence"),
        p_leakage=parser.getfloat("augment", "p_leakage"),
        leakage_gain_range=(
            parser.getfloat("augment", "leakage_gain_low"),
            parser.getfloat("augment", "leakage_gain_high"),
        ),
        leakage_delay_range_s=(
            parser.getfloat("augment", "leakage_delay_low_s"),
            parser.getfloat("augment", "leakage_delay_high_s"),
        ),
    )
    interruption = InterruptionPolicy(
        p_interrupt=parser.getfloat("interruption", "p_interrupt"),
        reaction_delay_s=parser.getfloat("interruption", "reaction_delay_s"),
    )
    return RunConfig(stream, packing, augment, interruption)
