"""Seeded random streams.

All randomness is drawn from numpy's PCG64 bit generator. Substreams are
derived with ``SeedSequence.spawn`` so that independent consumers (patients,
bootstrap resamples, augmentation) never share state and results do not depend
on the order in which they are processed.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Thin wrapper around ``numpy.random.Generator(PCG64)`` with ``split``."""

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            if seed < 0 or seed >= 2**64:
                raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
            self._seq = np.random.SeedSequence(int(seed))
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["Rng"]:
        """Return ``n`` independent child streams."""
        return [Rng(s) for s in self._seq.spawn(n)]

    def child(self, key: int) -> "Rng":
        """Deterministic substream addressed by an integer key.

        Unlike ``split``, the result depends only on the root seed and ``key``,
        not on how many children were requested before.
        """
        entropy = self._seq.entropy
        return Rng(np.random.SeedSequence(entropy, spawn_key=tuple(self._seq.spawn_key) + (int(key),)))

    # convenience passthroughs
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def poisson(self, lam=1.0, size=None):
        return self.gen.poisson(lam, size)

    def permutation(self, x):
        return self.gen.permutation(x)
