"""Deterministic random stream derivation.

Every source of randomness in the package is a child stream of a single
master seed, keyed by a purpose code plus integer qualifiers (client id,
grid point, seed index, ...). Adding new purposes or new clients never
perturbs existing streams, and identical keys yield bit-identical streams
regardless of the order or thread in which they are consumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Purpose codes. Appending new codes is safe; renumbering is a breaking change.
DATAGEN = 1
FOLDS = 2
BATCH = 3
EVAL = 4
CENTRALIZED = 5
LOCAL = 6
REFERENCE = 7
PARTICIPATION = 8
THETA_STAR = 9
CELL = 10
BASELINE_DATA = 11
SHIFT = 12
FEDOPL = 13


@dataclass(frozen=True)
class StreamKey:
    """A point in the seed-derivation tree.

    ``StreamKey(seed).child(FEDOPL, 3).rng()`` is the generator for purpose
    FEDOPL, qualifier 3, under the given master seed.
    """

    master_seed: int
    path: tuple[int, ...] = field(default=())

    def child(self, *keys: int) -> "StreamKey":
        for k in keys:
            if not isinstance(k, (int, np.integer)) or k < 0:
                raise ValueError(f"stream key components must be nonnegative ints, got {k!r}")
        return StreamKey(self.master_seed, self.path + tuple(int(k) for k in keys))

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.path)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed_sequence())
