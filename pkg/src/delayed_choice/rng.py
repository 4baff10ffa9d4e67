"""Counter-based random streams.

Every random draw in a simulation comes from a Philox generator keyed by
``(seed, *key)``, where the key names a block of triggers and a purpose tag.
Because the key fully determines the stream, blocks can be simulated in any
order, by any number of workers, and still reproduce bit for bit.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "tag_code", "bernoulli_positions"]


def tag_code(tag: str) -> int:
    """Stable 32-bit code for a purpose tag (independent of PYTHONHASHSEED)."""
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, *key: int | str) -> np.random.Generator:
    words = tuple(tag_code(k) if isinstance(k, str) else int(k) for k in key)
    if any(w < 0 for w in words):
        raise ValueError(f"stream key words must be non-negative, got {key!r}")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=words)
    return np.random.Generator(np.random.Philox(ss))


def bernoulli_positions(rng: np.random.Generator, n: int, q: float) -> np.ndarray:
    """Sorted indices in ``[0, n)`` of the successes of ``n`` Bernoulli(q) trials.

    Sparse regimes draw geometric gaps, dense ones a uniform per trial; both are
    exact, and the branch depends only on ``q`` so results stay reproducible.
    """
    if n <= 0 or q <= 0.0:
        return np.empty(0, dtype=np.int64)
    if q >= 1.0:
        return np.arange(n, dtype=np.int64)
    if q > 0.02:
        return np.flatnonzero(rng.random(n) < q).astype(np.int64)
    expected = n * q
    chunk = int(expected + 6.0 * np.sqrt(expected) + 16)
    out = []
    last = -1
    while True:
        pos = last + np.cumsum(rng.geometric(q, size=chunk), dtype=np.int64)
        out.append(pos)
        last = int(pos[-1])
        if last >= n:
            break
    pos = np.concatenate(out)
    return pos[pos < n]
