"""Seeded, portable random streams.

Every random decision in the package (byte mappings, parameter init, client
sampling, batch composition, synthetic data) is drawn from the raw 64-bit
output of the PCG64 (XSL-RR 128/64) bit generator.  Only ``random_raw`` and
``SeedSequence`` are used, both of which numpy keeps bit-stable across
releases and platforms, so a ``(seed, keys)`` pair always reproduces the same
stream.  Derived draws use fixed, documented transforms:

* bounded integers: modulo rejection on the raw word (``x < 2**64 - 2**64 % k``)
* floats in [0, 1): top 53 bits of the raw word times ``2**-53``
* sampling without replacement: partial Fisher-Yates from the end of the array
"""

from __future__ import annotations

import numpy as np

PRNG_ID = "pcg64-raw64/v1"

_TWO64 = 1 << 64
_CHUNK = 4096

# Stream tags, so independent consumers never share a stream.
TAG_MAPPING = 0
TAG_INIT = 1
TAG_PARTITION = 2
TAG_ROUND = 3
TAG_CORPUS = 4
TAG_SENTENCES = 5
TAG_COVERAGE = 6
TAG_ATTACK = 7


class Stream:
    """A deterministic stream of 64-bit words keyed by ``(seed, *keys)``."""

    def __init__(self, seed: int, *keys: int):
        if seed < 0 or seed >= _TWO64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        entropy = [int(seed)] if not keys else [int(seed), *map(int, keys)]
        self._bg = np.random.PCG64(np.random.SeedSequence(entropy))
        self._buffers: dict[int, np.ndarray] = {}

    def raw(self, size: int) -> np.ndarray:
        return np.asarray(self._bg.random_raw(size), dtype=np.uint64)

    def below(self, k: int) -> int:
        """One integer uniform in ``[0, k)``."""
        if k <= 0:
            raise ValueError("k must be positive")
        limit = _TWO64 - (_TWO64 % k)
        while True:
            x = int(self._bg.random_raw())
            if x < limit:
                return x % k

    def integers(self, k: int, size: int) -> np.ndarray:
        """``size`` integers uniform in ``[0, k)``.

        The result is the in-order sequence of accepted raw words reduced mod
        ``k``; words drawn past ``size`` are buffered for the next call with
        the same ``k``, so the output does not depend on how calls are split.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        out = np.empty(size, dtype=np.int64)
        buf = self._buffers.get(k, np.empty(0, dtype=np.int64))
        limit = np.uint64(_TWO64 - (_TWO64 % k)) if _TWO64 % k else None
        filled = 0
        while filled < size:
            if buf.size == 0:
                words = self.raw(max(_CHUNK, size - filled))
                if limit is not None:
                    words = words[words < limit]
                buf = (words % np.uint64(k)).astype(np.int64)
            take = min(buf.size, size - filled)
            out[filled:filled + take] = buf[:take]
            buf = buf[take:]
            filled += take
        self._buffers[k] = buf
        return out

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        n = int(np.prod(size)) if np.ndim(size) else int(size)
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return (low + (high - low) * u).reshape(size)

    def sample(self, population: int, k: int) -> list[int]:
        """``k`` distinct indices from ``range(population)``, in draw order."""
        if k > population or k < 0:
            raise ValueError(f"cannot sample {k} of {population}")
        pool = list(range(population))
        picked = []
        for i in range(population - 1, population - 1 - k, -1):
            j = self.below(i + 1)
            pool[i], pool[j] = pool[j], pool[i]
            picked.append(pool[i])
        return picked

    def permutation(self, population: int) -> list[int]:
        return self.sample(population, population)

    def categorical(self, cdf: np.ndarray, size: int) -> np.ndarray:
        """Indices drawn from the distribution with cumulative weights ``cdf``."""
        u = self.uniform(0.0, 1.0, size)
        idx = np.searchsorted(cdf, u * cdf[-1], side="right")
        return np.minimum(idx, cdf.size - 1)
