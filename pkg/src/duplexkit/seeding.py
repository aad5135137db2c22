"""Stable seed derivation for order-independent parallel builds.

Python's builtin `hash` is salted per process, so per-item seeds are
derived from SHA-256 instead: identical (seed, item id) pairs produce the
same stream on every platform and run.
"""

from __future__ import annotations

import hashlib
import random

import numpy as np


def derive_seed(seed: int, *parts: str | int) -> int:
    digest = hashlib.sha256()
    digest.update(str(int(seed)).encode())
    for part in parts:
        digest.update(b"\x1f")
        digest.update(str(part).encode())
    return int.from_bytes(digest.digest()[:8], "little")


def derive_random(seed: int, *parts: str | int) -> random.Random:
    return random.Random(derive_seed(seed, *parts))


def derive_generator(seed: int, *parts: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *parts))
