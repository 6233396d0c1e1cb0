"""Deterministic splitting of one root seed into independent streams.

A stream is addressed by a path of non-negative integers, e.g.
``(replication, iteration, level, kind)``. Distinct paths give statistically
independent generators, and the same path always gives the same draws.
"""

import numpy as np

KIND_G = 0
KIND_J = 1
KIND_INDEX = 2
KIND_INIT = 3


class SeedTree:
    """A node in the seed tree; ``child`` descends, ``generator`` draws."""

    __slots__ = ("seed", "path")

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)

    def child(self, *keys):
        return SeedTree(self.seed, self.path + tuple(int(k) for k in keys))

    def generator(self):
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"SeedTree({self.seed}, {self.path})"

    def __eq__(self, other):
        return isinstance(other, SeedTree) and (self.seed, self.path) == (other.seed, other.path)

    def __hash__(self):
        return hash((self.seed, self.path))
