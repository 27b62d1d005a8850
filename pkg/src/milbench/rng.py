"""Counter-based random streams shared by the whole package.

Every piece of randomness (parameter init, synthetic bags, epoch
shuffles) draws from a Philox generator keyed by ``(root_seed, purpose,
index)``.  Streams are independent by construction, so adding a draw to
one consumer never shifts the values seen by another, and a run is
reproducible from the single root seed alone.
"""

from __future__ import annotations

import numpy as np

# Purpose tags occupy the top byte of the second key word; the low 56
# bits carry a per-purpose index (bag counter, shuffle epoch, ...).
PURPOSE_INIT = 1
PURPOSE_BAG = 2
PURPOSE_SHUFFLE = 3

_INDEX_BITS = 56
_INDEX_MASK = (1 << _INDEX_BITS) - 1


def stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    """Return the Philox stream for (seed, purpose, index)."""
    if not 0 <= index <= _INDEX_MASK:
        raise ValueError(f"stream index out of range: {index}")
    key = np.array(
        [np.uint64(seed & (2**64 - 1)), np.uint64((purpose << _INDEX_BITS) | index)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(gen: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` N(0, 1) samples via the Box-Muller transform.

    Uniform pairs come from ``gen.random``; the first half of the output
    uses the cosine branch and the second half the sine branch, so the
    layout is a pure function of ``n`` and the stream state.
    """
    if n < 0:
        raise ValueError("sample count must be non-negative")
    if n == 0:
        return np.zeros(0)
    pairs = (n + 1) // 2
    u1 = gen.random(pairs)
    u2 = gen.random(pairs)
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    return np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]


def uniform(gen: np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    """Uniform draws on [lo, hi) with a deterministic draw order."""
    return lo + (hi - lo) * gen.random(shape)
