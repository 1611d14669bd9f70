"""Seedable, splittable random streams on top of numpy's counter-based Philox.

A stream is identified by a root seed plus a spawn key, so any worker can
rebuild exactly the stream another worker would have used.
"""

from __future__ import annotations

import numpy as np

_BUFFER = 512


class RandomStream:
    """Buffered source of uniform 64-bit words with exact big-integer draws."""

    def __init__(self, seed: int = 0, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(x) for x in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(ss))
        self._words: list[int] = []
        self._pos = 0

    def spawn(self, *key: int) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(key))

    def _word(self) -> int:
        if self._pos >= len(self._words):
            self._words = self.generator.integers(
                0, 2**64, size=_BUFFER, dtype=np.uint64, endpoint=False).tolist()
            self._pos = 0
        w = self._words[self._pos]
        self._pos += 1
        return w

    def getrandbits(self, nbits: int) -> int:
        out = 0
        got = 0
        while got < nbits:
            out |= self._word() << got
            got += 64
        return out & ((1 << nbits) - 1)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` for arbitrarily large ``n``."""
        if n <= 0:
            raise ValueError("randbelow needs a positive bound")
        if n == 1:
            return 0
        nbits = (n - 1).bit_length()
        while True:
            r = self.getrandbits(nbits)
            if r < n:
                return r

    def random(self) -> float:
        return (self._word() >> 11) * (1.0 / 9007199254740992.0)


def stream(seed: int, *key: int) -> RandomStream:
    return RandomStream(seed, key)
