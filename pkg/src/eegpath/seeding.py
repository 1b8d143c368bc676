"""Deterministic derivation of child seeds from one run seed."""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, *keys) -> int:
    """Mix string/int keys into ``seed``; equal inputs give equal outputs."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(str(k).encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0] >> 1)


def rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
