"""Command-line entry point and dataset build orchestration.

Subcommands: build (manifests -> frame files + weight maps + summary),
validate (structural and offset-law checks over a dataset directory),
augment (waveform gain/noise augmentation), simulate (drive the duplex
engine from a script), serve (wire-protocol socket server), analyze
(context-growth reports). Builds are deterministic: a (manifest, seed,
config) triple yields byte-identical outputs, and the summary keeps a
hash of the effective configuration.

Exit codes: 0 success, 1 validation/build failure, 2 usage error. Set
DUPLEXKIT_LOG to adjust log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import align as align_mod
from . import dialog as dialog_mod
from .align import AlignedPair, PackingPolicy, pack
from .analyzer import SchedulingScheme, context_curve, context_growth
from .augment import AugmentSpec, augment_user_audio_traced
from .codec import PseudoCodec, Waveform, read_wav, write_wav
from .config import RunConfig, default_config_text, load_config
from .dialog import DialogScript, DialogTurn, InterruptionPolicy
from .frames import (
    ACOUSTIC_POS,
    FrameSequence,
    MarkerKind,
    SEMANTIC_POS,
    StreamConfig,
    TEXT_POS,
    load_frames,
    save_frames,
    validate as validate_sequence,
)
from .lossmask import LossWeights, class_counts, save_weight_map, weight_map
from .manifest import (
    read_corpus_manifest,
    read_dialog_manifest,
    read_noise_manifest,
)
from .runtime import EchoModel, RuntimePolicy, ScriptedModel, run
from .seeding import derive_generator
from .wire import DuplexServer

log = logging.getLogger("duplexkit.cli")

STAGES = ("post1-tts", "post1-asr", "sft1", "sft2", "sft2-duplex")
STAGE_ALIASES = {
    "asr-response-tts": "sft1",
    "response-tts": "sft2",
    "full-duplex": "sft2-duplex",
}

# Reference training schedule metadata recorded into build summaries;
# the trainer consuming these datasets lives outside this package.
TRAINING_REFERENCE = {
    "post1-tts": {"phase": "post-training-1", "data_format": "TTS+ASR", "epochs": 3.3, "batch_size": 256, "lr": "2e-4..1e-5"},
    "post1-asr": {"phase": "post-training-1", "data_format": "TTS+ASR", "epochs": 3.3, "batch_size": 256, "lr": "2e-4..1e-5"},
    "sft1": {"phase": "fine-tuning-1", "data_format": "ASR-Response-TTS", "epochs": 2, "batch_size": 256, "lr": "1e-5..8e-6"},
    "sft2": {"phase": "fine-tuning-2", "data_format": "Response-TTS", "epochs": 6, "batch_size": 256, "lr": "8e-6..7e-6"},
    "sft2-duplex": {"phase": "fine-tuning-2", "data_format": "Response-TTS + free user inputs", "epochs": 6, "batch_size": 256, "lr": "8e-6..7e-6"},
}


class BuildError(RuntimeError):
    pass


@dataclass
class BuildJob:
    stage: str
    manifest: Path
    out_dir: Path
    run_config: RunConfig
    seed: int = 0
    noise_manifest: Path | None = None
    force: bool = False
    weights: LossWeights = LossWeights()

    def __post_init__(self) -> None:
        self.stage = STAGE_ALIASES.get(self.stage, self.stage)
        if self.stage not in STAGES:
            raise BuildError(f"unknown stage {self.stage!r}; expected one of {STAGES}")


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


def _config_hash(job: BuildJob) -> str:
    cfg = job.run_config
    payload = {
        "stage": job.stage,
        "seed": job.seed,
        "stream": {**dataclasses.asdict(cfg.stream), "frame_rate_hz": str(cfg.stream.frame_rate_hz)},
        "packing": dataclasses.asdict(cfg.packing),
        "augment": dataclasses.asdict(cfg.augment),
        "interruption": dataclasses.asdict(cfg.interruption),
        "weights": dataclasses.asdict(job.weights),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _prepare_out_dir(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise BuildError(f"output directory {out_dir} is not empty (use --force)")
        for child in out_dir.iterdir():
            if child.is_file():
                child.unlink()
    out_dir.mkdir(parents=True, exist_ok=True)


def _load_wav_for_stream(path: str, cfg: StreamConfig) -> Waveform:
    wav = read_wav(path)
    if wav.sample_rate_hz != cfg.sample_rate_hz:
        raise BuildError(
            f"{path}: sample rate {wav.sample_rate_hz} does not match stream {cfg.sample_rate_hz}"
        )
    return wav


def _build_stage1(job: BuildJob, errors: list[dict]) -> tuple[list[FrameSequence], int]:
    cfg = job.run_config.stream
    codec = PseudoCodec()
    records = read_corpus_manifest(job.manifest, cfg)
    aligner = align_mod.align_tts if job.stage == "post1-tts" else align_mod.align_asr
    sequences = []
    for rec in records:
        try:
            wav = _load_wav_for_stream(rec.wav_path, cfg)
            codes = codec.encode(wav, cfg)
            if not codes:
                raise BuildError(f"{rec.wav_path}: shorter than one hop")
            pair = AlignedPair(rec.transcript, tuple(codes), rec.source_id)
            sequences.append(aligner(pair, cfg))
        except Exception as exc:  # per-record failures go to the error report
            errors.append({"source_id": rec.source_id, "error": str(exc)})
    packing = dataclasses.replace(job.run_config.packing, seed=job.seed)
    return pack(sequences, packing), len(records)


def _build_sft(job: BuildJob, errors: list[dict]) -> tuple[list[FrameSequence], int]:
    cfg = job.run_config.stream
    codec = PseudoCodec()
    records = read_dialog_manifest(job.manifest, cfg)
    noise_pool: list[Waveform] = []
    if job.noise_manifest is not None:
        for noise_rec in read_noise_manifest(job.noise_manifest):
            noise_pool.append(_load_wav_for_stream(noise_rec.wav_path, cfg))
    spec = dataclasses.replace(job.run_config.augment, seed=job.seed)

    sequences = []
    for rec in records:
        try:
            rng = derive_generator(job.seed, rec.dialog_id, "augment")
            turns = []
            for turn in rec.turns:
                wav = _load_wav_for_stream(turn.wav_path, cfg)
                if turn.speaker == "user" and noise_pool:
                    wav, _ = augment_user_audio_traced(wav, noise_pool, spec, rng)
                codes = codec.encode(wav, cfg)
                if not codes:
                    raise BuildError(f"{turn.wav_path}: shorter than one hop")
                turns.append(DialogTurn(turn.speaker, turn.transcript, tuple(codes)))
            script = DialogScript(rec.dialog_id, tuple(turns))
            if job.stage == "sft1":
                seq = dialog_mod.build_asr_response_tts(script, cfg, seed=job.seed)
            elif job.stage == "sft2":
                seq = dialog_mod.build_response_tts(script, cfg, seed=job.seed)
            else:
                policy = dataclasses.replace(job.run_config.interruption, seed=job.seed)
                seq = dialog_mod.inject_interruptions(script, policy, cfg)
            sequences.append(seq)
        except Exception as exc:
            errors.append({"source_id": rec.dialog_id, "error": str(exc)})
    return sequences, len(records)


def build_dataset(job: BuildJob) -> dict:
    """Run one build job; returns (and writes) the summary record."""
    _prepare_out_dir(job.out_dir, job.force)
    errors: list[dict] = []
    if job.stage in ("post1-tts", "post1-asr"):
        sequences, n_records = _build_stage1(job, errors)
    else:
        sequences, n_records = _build_sft(job, errors)

    totals = {"total_frames": 0}
    counts: dict[str, int] = {}
    files = []
    for i, seq in enumerate(sequences):
        stem = f"{i:05d}-{_sanitize(seq.source_id or 'seq')}"
        save_frames(job.out_dir / f"{stem}.frames", seq)
        save_weight_map(job.out_dir / f"{stem}.weights", weight_map(seq, job.weights))
        files.append(f"{stem}.frames")
        totals["total_frames"] += len(seq)
        for key, value in class_counts(seq).items():
            counts[key] = counts.get(key, 0) + value

    summary = {
        "stage": job.stage,
        "seed": job.seed,
        "config_hash": _config_hash(job),
        "records": n_records,
        "failed_records": len(errors),
        "sequences": len(sequences),
        "files": files,
        "total_frames": totals["total_frames"],
        "class_counts": counts,
        "errors": errors,
        "training_reference": TRAINING_REFERENCE[job.stage],
    }
    (job.out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if n_records and len(errors) / n_records > 0.01:
        raise BuildError(
            f"{len(errors)} of {n_records} records failed (over the 1% budget); "
            f"see {job.out_dir / 'summary.json'}"
        )
    return summary


# ---------------------------------------------------------------------------
# Dataset validation
# ---------------------------------------------------------------------------


def _offset_violations(seq: FrameSequence) -> list[dict]:
    cfg = seq.config
    toks = seq.tokens_array()
    n = len(seq)
    out: list[dict] = []
    if n == 0:
        return out
    empty = cfg.empty_audio_id
    lead = cfg.text_lead_steps
    delay = cfg.acoustic_delay_steps
    sem = toks[:, SEMANTIC_POS] != empty
    ac = (toks[:, ACOUSTIC_POS] != empty).any(axis=1)
    cutoffs = {m.step for m in seq.markers if m.kind == MarkerKind.CUTOFF}

    for t in range(n):
        if ac[t] and (t - delay < 0 or not sem[t - delay]):
            out.append({"step": t, "rule": f"acoustic codes without semantic code {delay} step earlier"})
        if sem[t]:
            u = t + delay
            if (u >= n or not ac[u]) and u not in cutoffs and delay > 0:
                out.append({"step": t, "rule": "semantic code lacks trailing acoustic codes"})

    answer_steps = np.nonzero(toks[:, TEXT_POS] == cfg.answer_id)[0]
    for a in answer_steps:
        r = int(a) + 1
        if r >= n or toks[r, TEXT_POS] >= cfg.text_vocab_base:
            continue
        expected = r + lead
        if expected >= n or not sem[expected]:
            out.append({"step": r, "rule": f"response speech does not start {lead} steps after text"})
        elif sem[r:expected].any():
            out.append({"step": r, "rule": "response speech starts before the configured lead"})

    if sem.any():
        for m in seq.markers:
            if m.kind != MarkerKind.SENTENCE_START:
                continue
            expected = m.step + lead
            if expected >= n or not sem[expected]:
                out.append({"step": m.step, "rule": f"sentence speech does not start {lead} steps after text"})
    return out


def validate_dataset(directory: str | Path) -> dict:
    """Structural + offset-law checks over every frame file in a directory."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.frames"))
    report = {"directory": str(directory), "files": len(paths), "violations": []}
    if not paths:
        report["violations"].append({"file": "", "step": None, "rule": "no frame files found"})
        return report
    reference_cfg: StreamConfig | None = None
    for path in paths:
        try:
            seq = load_frames(path)
        except Exception as exc:
            report["violations"].append({"file": path.name, "step": None, "rule": f"unreadable: {exc}"})
            continue
        if reference_cfg is None:
            reference_cfg = seq.config
        elif seq.config != reference_cfg:
            report["violations"].append(
                {"file": path.name, "step": None, "rule": "stream config differs from the rest of the dataset"}
            )
        for violation in validate_sequence(seq):
            report["violations"].append(
                {"file": path.name, "step": violation.frame, "rule": str(violation)}
            )
        for violation in _offset_violations(seq):
            report["violations"].append({"file": path.name, **violation})
    report["ok"] = not report["violations"]
    return report


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_build(args: argparse.Namespace) -> int:
    run_config = load_config(args.config)
    if args.target_len is not None:
        run_config = dataclasses.replace(
            run_config, packing=dataclasses.replace(run_config.packing, target_len=args.target_len)
        )
    if args.p_interrupt is not None or args.reaction_delay_s is not None:
        interruption = run_config.interruption
        if args.p_interrupt is not None:
            interruption = dataclasses.replace(interruption, p_interrupt=args.p_interrupt)
        if args.reaction_delay_s is not None:
            interruption = dataclasses.replace(interruption, reaction_delay_s=args.reaction_delay_s)
        run_config = dataclasses.replace(run_config, interruption=interruption)
    job = BuildJob(
        stage=args.stage,
        manifest=Path(args.manifest),
        out_dir=Path(args.out),
        run_config=run_config,
        seed=args.seed,
        noise_manifest=Path(args.noise_manifest) if args.noise_manifest else None,
        force=args.force,
    )
    summary = build_dataset(job)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    report = validate_dataset(args.directory)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["ok"] else 1


def _cmd_augment(args: argparse.Namespace) -> int:
    run_config = load_config(args.config)
    spec = AugmentSpec.load(args.spec) if args.spec else run_config.augment
    spec = dataclasses.replace(spec, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = [read_wav(rec.wav_path) for rec in read_noise_manifest(args.noise_manifest)]
    traces = {}
    for rec in read_noise_manifest(args.manifest):
        wav = read_wav(rec.wav_path)
        rng = derive_generator(spec.seed, Path(rec.wav_path).name)
        augmented, trace = augment_user_audio_traced(wav, pool, spec, rng)
        name = Path(rec.wav_path).name
        write_wav(out_dir / name, augmented)
        traces[name] = {
            "gain_applied": trace.gain_applied,
            "gain_shift_db": trace.gain_shift_db,
            "pre_gain_db": trace.pre_gain_db,
            "post_gain_db": trace.post_gain_db,
            "floored": trace.floored,
            "noise_clips": len(trace.noise_clips),
        }
    (out_dir / "augment-trace.json").write_text(json.dumps(traces, indent=2, sort_keys=True) + "\n")
    print(f"augmented {len(traces)} file(s) into {out_dir}")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    script = load_frames(args.script)
    cfg = script.config
    if args.model == "scripted":
        model = ScriptedModel(script)
    else:
        model = EchoModel(cfg)
    listen = [frame.listen for frame in script.frames]
    policy = RuntimePolicy(realtime=args.realtime)
    seq, report = run(model, listen, cfg, policy)
    if args.save:
        save_frames(args.save, seq)
    result = {
        "model": args.model,
        "steps": report.steps,
        "realtime": report.realtime,
        "wall_s": round(report.wall_s, 3),
        "mean_step_period_ms": report.mean_step_period_ms,
        "first_speech_latency_steps": report.first_speech_latency_steps,
        "cutoff_latency_steps": report.cutoff_latency_steps,
        "one_in_one_out": report.steps == len(script.frames),
        "replay_exact": seq == script if args.model == "scripted" else None,
    }
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        print(f"invalid --listen address {args.listen!r} (expected host:port)", file=sys.stderr)
        return 2
    if args.model == "scripted":
        if not args.script:
            print("--script is required with --model scripted", file=sys.stderr)
            return 2
        script = load_frames(args.script)
        cfg = script.config
        factory = lambda: ScriptedModel(script)  # noqa: E731
    else:
        cfg = load_config(args.config).stream
        factory = lambda: EchoModel(cfg)  # noqa: E731
    server = DuplexServer(factory, cfg, host=host, port=int(port))
    print(f"serving duplex sessions on {server.address[0]}:{server.address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.close()
    return 0


def _cmd_analyze(args: argparse.Namespace) -> int:
    cfg = load_config(args.config).stream
    scheme = SchedulingScheme("tdm", channels=args.channels)
    report = context_growth(args.duration_s, cfg, scheme, budget_tokens=args.budget)
    if args.csv:
        rows = context_curve(args.duration_s, cfg, scheme)
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("t_s,native_ctx,tdm_ctx\n")
            for t, native, tdm in rows:
                fh.write(f"{t:.3f},{native},{tdm}\n")
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        d = report.to_dict()
        print(f"duration: {d['duration_s']} s")
        print(f"context (merged per step): {d['native_ctx_len']} tokens")
        print(f"context (interleaved x{args.channels}): {d['tdm_ctx_len']} tokens")
        print(f"attention proxy ratio: {d['attention_ops_tdm'] / max(d['attention_ops_native'], 1):.0f}x")
        if d["max_audio_s_at_budget"]:
            budget = d["max_audio_s_at_budget"]
            print(f"audio per {args.budget}-token budget: merged {budget['native']:.1f} s, "
                  f"interleaved {budget['tdm']:.1f} s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duplexkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build a dataset from a manifest")
    p_build.add_argument("--stage", required=True, choices=STAGES + tuple(STAGE_ALIASES))
    p_build.add_argument("--manifest", required=True)
    p_build.add_argument("--out", required=True)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--config", default=None, help="INI config file")
    p_build.add_argument("--target-len", type=int, default=None, help="override pack length")
    p_build.add_argument("--noise-manifest", default=None)
    p_build.add_argument("--p-interrupt", type=float, default=None)
    p_build.add_argument("--reaction-delay-s", type=float, default=None)
    p_build.add_argument("--force", action="store_true")
    p_build.set_defaults(func=_cmd_build)

    p_val = sub.add_parser("validate", help="validate a built dataset directory")
    p_val.add_argument("directory")
    p_val.set_defaults(func=_cmd_validate)

    p_aug = sub.add_parser("augment", help="augment waveforms from a manifest")
    p_aug.add_argument("--manifest", required=True, help="JSONL of wav_path records to augment")
    p_aug.add_argument("--noise-manifest", required=True, help="JSONL of noise pool wav_paths")
    p_aug.add_argument("--spec", default=None, help="AugmentSpec JSON file")
    p_aug.add_argument("--seed", type=int, default=0)
    p_aug.add_argument("--out", required=True)
    p_aug.add_argument("--config", default=None)
    p_aug.set_defaults(func=_cmd_augment)

    p_sim = sub.add_parser("simulate", help="run the duplex engine over a script")
    p_sim.add_argument("--model", choices=("scripted", "echo"), default="scripted")
    p_sim.add_argument("--script", required=True, help="frame file driving the session")
    pacing = p_sim.add_mutually_exclusive_group()
    pacing.add_argument("--realtime", action="store_true")
    pacing.add_argument("--fast", dest="realtime", action="store_false")
    p_sim.add_argument("--save", default=None, help="write the session output frames here")
    p_sim.set_defaults(func=_cmd_simulate, realtime=False)

    p_srv = sub.add_parser("serve", help="serve duplex sessions over the wire protocol")
    p_srv.add_argument("--listen", required=True, help="host:port")
    p_srv.add_argument("--model", choices=("scripted", "echo"), default="echo")
    p_srv.add_argument("--script", default=None)
    p_srv.add_argument("--config", default=None)
    p_srv.set_defaults(func=_cmd_serve)

    p_an = sub.add_parser("analyze", help="context growth and cost analysis")
    p_an.add_argument("--duration-s", type=float, required=True)
    p_an.add_argument("--budget", type=int, default=None)
    p_an.add_argument("--channels", type=int, default=17)
    p_an.add_argument("--json", action="store_true")
    p_an.add_argument("--csv", default=None)
    p_an.add_argument("--config", default=None)
    p_an.set_defaults(func=_cmd_analyze)

    p_cfg = sub.add_parser("config", help="print the default config file")
    p_cfg.set_defaults(func=lambda args: (print(default_config_text(), end=""), 0)[1])

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DUPLEXKIT_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (BuildError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
