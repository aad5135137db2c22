"""JSON-lines manifest ingestion for corpus, dialog, and noise inputs.

Corpus records (one aligned sentence each):
    {"source_id": ..., "wav_path": ..., "transcript_token_ids": [...],
     "lang": "en"}
or, with pre-tokenized IDs unavailable,
    {"source_id": ..., "wav_path": ..., "transcript_text": "...",
     "tokenizer": "byte", "lang": "en"}

Dialog records:
    {"dialog_id": ..., "turns": [{"speaker": "user"|"model",
     "wav_path": ..., "transcript_token_ids": [...]}, ...]}

Noise records:
    {"wav_path": ..., "category": "environmental"|"speech"}

Only a byte-level tokenizer ships here (token = UTF-8 byte value);
anything richer must arrive pre-tokenized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .frames import StreamConfig


class ManifestError(ValueError):
    pass


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise ManifestError(f"{path}:{lineno}: record must be an object")
            yield lineno, record


def tokenize_text(text: str, tokenizer: str, cfg: StreamConfig) -> tuple[int, ...]:
    if tokenizer == "byte":
        if cfg.text_vocab_base < 256:
            raise ManifestError("byte tokenizer needs a base vocabulary of at least 256")
        return tuple(text.encode("utf-8"))
    raise ManifestError(f"unknown tokenizer {tokenizer!r} (only 'byte' is built in)")


def _transcript_from(record: dict, cfg: StreamConfig, where: str) -> tuple[int, ...]:
    if "transcript_token_ids" in record:
        ids = record["transcript_token_ids"]
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise ManifestError(f"{where}: transcript_token_ids must be a list of ints")
        return tuple(ids)
    if "transcript_text" in record:
        tokenizer = record.get("tokenizer", "byte")
        return tokenize_text(record["transcript_text"], tokenizer, cfg)
    raise ManifestError(f"{where}: need transcript_token_ids or transcript_text")


@dataclass(frozen=True)
class CorpusRecord:
    source_id: str
    wav_path: str
    transcript: tuple[int, ...]
    lang: str = ""


@dataclass(frozen=True)
class DialogTurnRecord:
    speaker: str
    wav_path: str
    transcript: tuple[int, ...]


@dataclass(frozen=True)
class DialogRecord:
    dialog_id: str
    turns: tuple[DialogTurnRecord, ...]


@dataclass(frozen=True)
class NoiseRecord:
    wav_path: str
    category: str = ""


def read_corpus_manifest(path: str | Path, cfg: StreamConfig) -> list[CorpusRecord]:
    records = []
    for lineno, raw in iter_jsonl(path):
        where = f"{path}:{lineno}"
        for key in ("source_id", "wav_path"):
            if key not in raw:
                raise ManifestError(f"{where}: missing {key!r}")
        records.append(
            CorpusRecord(
                source_id=str(raw["source_id"]),
                wav_path=str(raw["wav_path"]),
                transcript=_transcript_from(raw, cfg, where),
                lang=str(raw.get("lang", "")),
            )
        )
    return records


def read_dialog_manifest(path: str | Path, cfg: StreamConfig) -> list[DialogRecord]:
    records = []
    for lineno, raw in iter_jsonl(path):
        where = f"{path}:{lineno}"
        if "dialog_id" not in raw or "turns" not in raw:
            raise ManifestError(f"{where}: missing dialog_id or turns")
        turns = []
        for i, turn in enumerate(raw["turns"]):
            t_where = f"{where} turn {i}"
            if "speaker" not in turn or "wav_path" not in turn:
                raise ManifestError(f"{t_where}: missing speaker or wav_path")
            if turn["speaker"] not in ("user", "model"):
                raise ManifestError(f"{t_where}: speaker must be 'user' or 'model'")
            if "transcript_token_ids" in turn or "transcript_text" in turn:
                transcript = _transcript_from(turn, cfg, t_where)
            else:
                transcript = ()
            turns.append(DialogTurnRecord(turn["speaker"], str(turn["wav_path"]), transcript))
        records.append(DialogRecord(str(raw["dialog_id"]), tuple(turns)))
    return records


def read_noise_manifest(path: str | Path) -> list[NoiseRecord]:
    records = []
    for lineno, raw in iter_jsonl(path):
        if "wav_path" not in raw:
            raise ManifestError(f"{path}:{lineno}: missing wav_path")
        records.append(NoiseRecord(str(raw["wav_path"]), str(raw.get("category", ""))))
    return records
