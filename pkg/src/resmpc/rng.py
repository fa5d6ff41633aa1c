"""Seed substreams.

All randomness derives from one integer seed. A substream is identified by
``(seed, tag, *index)`` where ``tag`` is a short purpose string (hashed with
CRC-32 so the mapping is stable across Python versions) and ``index`` are
non-negative integers such as a replicate or step number.
"""
import zlib

import numpy as np


def _flatten(seed):
    if isinstance(seed, (tuple, list)):
        out = []
        for s in seed:
            out.extend(_flatten(s))
        return out
    s = int(seed)
    if s < 0:
        raise ValueError(f"seeds must be non-negative, got {s}")
    return [s]


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive(seed, tag: str, *index) -> tuple:
    """Seed key for a child stream; pass it anywhere a seed is accepted."""
    return (*_flatten(seed), tag_id(tag), *_flatten(list(index)))


def substream(seed, tag: str, *index) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(derive(seed, tag, *index)))))
