from __future__ import annotations

import numpy as np


class RandomStream:
    """Seeded generator with reproducible child streams.

    Children are keyed by integers, so the same (seed, keys) pair always yields
    the same sequence regardless of what other streams consumed before it.
    This is what makes resume-from-checkpoint reproduce an uninterrupted run.
    """

    def __init__(self, seed: int, *keys: int) -> None:
        self.seed = int(seed)
        self.keys = tuple(int(k) for k in keys)
        self.generator = np.random.default_rng(np.random.SeedSequence([self.seed, *self.keys]))

    def child(self, *keys: int) -> "RandomStream":
        return RandomStream(self.seed, *self.keys, *keys)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x):
        return self.generator.permutation(x)

    def random(self, size=None):
        return self.generator.random(size)
