"""Reproducible random substreams.

Every random draw in the package comes from a Philox (counter-based)
generator keyed by ``(master seed, purpose tag, replica id)``.  Two calls
with the same key produce byte-identical streams no matter which process
or in which order they run.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_word(tag: str) -> int:
    # crc32 is stable across interpreter runs (unlike hash()).
    return zlib.crc32(tag.encode("utf-8"))


def substream(seed: int, tag: str = "", replica: int = 0) -> np.random.Generator:
    """Return the generator for ``(seed, tag, replica)``."""
    if seed < 0 or replica < 0:
        raise ValueError("seed and replica id must be non-negative")
    ss = np.random.SeedSequence([int(seed), _tag_word(tag), int(replica)])
    return np.random.Generator(np.random.Philox(ss))


def as_generator(seed, tag: str = "", replica: int = 0) -> np.random.Generator:
    """Accept an int seed or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        seed = 0
    return substream(int(seed), tag, replica)
