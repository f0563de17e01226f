"""Seeded Brownian paths refinable on dyadic grids, and tangent Gaussians.

Every random draw comes from its own generator keyed by
``(seed, purpose, level, index)``, so any value of the path can be produced
in any order and always comes out the same.
"""
from __future__ import annotations

import numpy as np

from .manifolds import InvalidInputError

# purpose tags for keyed streams
ENDPOINT_TAG = 0x5EED0
BRIDGE_TAG = 0x5EED1

MAX_LEVEL = 14


def _key(seed):
    """Seeds may be a single non-negative int or a tuple of them."""
    if isinstance(seed, (tuple, list)):
        return [int(s) for s in seed]
    return [int(seed)]


def keyed_rng(seed, *key):
    return np.random.default_rng(_key(seed) + [int(k) for k in key])


class DyadicBrownianPath:
    """Standard Brownian motion B on [0, T] in R^d, sampled on dyadic grids.

    Level i holds B at the times k T / 2^i, k = 0..2^i.  Finer levels are
    obtained by Brownian-bridge midpoints; stored values are never redrawn.
    ``batch_shape`` gives independent paths that share one object, e.g. one
    path per Monte Carlo repetition.
    """

    def __init__(self, horizon, dim, seed, max_level=0, batch_shape=()):
        if not horizon > 0:
            raise InvalidInputError("horizon must be > 0")
        if dim < 1:
            raise InvalidInputError("dim must be >= 1")
        if max_level > MAX_LEVEL:
            raise InvalidInputError(f"max_level {max_level} exceeds {MAX_LEVEL}")
        self.horizon = float(horizon)
        self.dim = int(dim)
        self.seed = seed
        self.batch_shape = tuple(batch_shape)
        self._shape = self.batch_shape + (self.dim,)
        end = np.sqrt(self.horizon) * keyed_rng(seed, ENDPOINT_TAG).standard_normal(self._shape)
        self._levels = [np.stack([np.zeros(self._shape), end])]
        # values produced lazily, keyed by (level, k) with k odd
        self._lazy = {}
        self.refine(max_level)

    @property
    def max_level(self):
        return len(self._levels) - 1

    def step(self, level):
        return self.horizon / 2**level

    def _midpoint(self, level, k, left, right):
        """B at time k T / 2^level (k odd) given its dyadic neighbours."""
        h = self.step(level - 1)
        z = keyed_rng(self.seed, BRIDGE_TAG, level, k).standard_normal(self._shape)
        return 0.5 * (left + right) + 0.5 * np.sqrt(h) * z

    def refine(self, upto=None):
        """Add one level (or all levels up to ``upto``); returns self."""
        target = self.max_level + 1 if upto is None else int(upto)
        if target > MAX_LEVEL:
            raise InvalidInputError(f"level {target} exceeds {MAX_LEVEL}")
        while self.max_level < target:
            lev = self.max_level + 1
            prev = self._levels[-1]
            new = np.empty((2 * len(prev) - 1,) + self._shape)
            new[0::2] = prev
            for j in range(len(prev) - 1):
                k = 2 * j + 1
                cached = self._lazy.pop((lev, k), None)
                new[k] = cached if cached is not None else self._midpoint(lev, k, prev[j], prev[j + 1])
            self._levels.append(new)
        return self

    def value(self, level, k):
        """B(k T / 2^level) without refining the stored levels."""
        if level < 0 or not 0 <= k <= 2**level:
            raise InvalidInputError(f"no dyadic node ({level}, {k})")
        while level > 0 and k % 2 == 0:
            level, k = level - 1, k // 2
        if level <= self.max_level:
            return self._levels[level][k]
        got = self._lazy.get((level, k))
        if got is None:
            got = self._midpoint(level, k, self.value(level - 1, k // 2), self.value(level - 1, k // 2 + 1))
            self._lazy[(level, k)] = got
        return got

    def values(self, level):
        """All nodes of a level, shape (2^level + 1, *batch, d)."""
        if level > self.max_level:
            self.refine(level)
        return self._levels[level]

    def increment(self, level, k):
        if not 0 <= k < 2**level:
            raise InvalidInputError(f"increment index {k} out of range at level {level}")
        return self.value(level, k + 1) - self.value(level, k)

    def increments(self, level):
        return np.diff(self.values(level), axis=0)


def tangent_gaussian(manifold, x, frame, rng):
    """xi o F with xi standard normal in R^d: a sample of N_x(0, I)."""
    xi = rng.standard_normal(np.shape(x)[:-1] + (manifold.dim,))
    return manifold.combine(frame, xi)


def chunk_seed(master, *key):
    """Derive a 64-bit seed for a unit of work from the master seed."""
    ss = np.random.SeedSequence(_key(master) + [int(k) for k in key])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)
