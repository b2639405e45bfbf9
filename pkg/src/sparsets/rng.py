"""Seeded random streams.

Every consumer asks for a generator by ``(seed, tag, ...)``.  Tags are hashed
into the seed sequence's spawn key, so a new consumer never shifts the
numbers another consumer sees.  Generators are PCG64 (128-bit state) and
Gaussian draws go through the inverse normal CDF of uniforms.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_HALF_ULP = 2.0**-54


def _tag_word(tag) -> int:
    digest = hashlib.sha256(str(tag).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def stream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``seed`` and a path of tags."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_tag_word(t) for t in tags))
    return np.random.Generator(np.random.PCG64(ss))


def normal_quantile(p):
    """Inverse standard normal CDF; ``p`` must lie strictly inside (0, 1)."""
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise ValueError("normal_quantile needs p in (0, 1)")
    q = ndtri(arr)
    return float(q) if np.ndim(q) == 0 else q


def gaussian(gen: np.random.Generator, size=None) -> np.ndarray:
    """Standard normal draws by inversion; uniforms are shifted off zero."""
    return ndtri(gen.random(size) + _HALF_ULP)
