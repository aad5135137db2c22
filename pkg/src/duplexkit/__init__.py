"""duplexkit: full-duplex dialog stream engine.

Multi-channel frame model (1 text + 8 listen + 8 speak tokens per 80 ms
step), sentence-level monologue alignment, dialog stream builders with
turn-taking and interruption semantics, waveform augmentation, loss
weight maps, and a streaming duplex runtime with mock models behind a
pluggable interface.
"""

from .align import AlignedPair, PackingPolicy, align_asr, align_tts, moshi_word_align, pack
from .analyzer import SchedulingScheme, context_growth, monologue_stats
from .augment import AugmentSpec, apply_gain_to_db, augment_user_audio, rms_db, speech_leakage
from .codec import CodecInterface, PseudoCodec, Waveform, read_wav, write_wav
from .dialog import (
    DialogScript,
    DialogTurn,
    InterruptionPolicy,
    build_asr_response_tts,
    build_response_tts,
    inject_interruptions,
)
from .frames import (
    Frame,
    FrameSequence,
    Marker,
    MarkerKind,
    StreamConfig,
    SupervisionClass,
    deserialize_frames,
    load_frames,
    save_frames,
    serialize_frames,
    validate,
)
from .lossmask import LossWeights, MOSHI_WEIGHTS, weight_map, weighted_ce
from .runtime import (
    DuplexModel,
    DuplexState,
    EchoModel,
    LatencyReport,
    RuntimePolicy,
    ScriptedModel,
    run,
    step_once,
)

__version__ = "0.1.0"
