"""
Seeded random streams.

Every stochastic operation draws from a generator keyed by the run seed and
integer tags (iteration, prompt id, ...), so results do not depend on the
order in which work is scheduled.
"""
from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]


def _sequence(seed: SeedLike, keys) -> np.random.SeedSequence:
    tags = tuple(int(k) for k in keys)
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + tags
        )
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tags)


def stream(seed: SeedLike, *keys: int) -> np.random.Generator:
    """Return a generator for ``seed`` refined by ``keys``."""
    return np.random.default_rng(_sequence(seed, keys))


def derive_seed(seed: SeedLike, *keys: int) -> int:
    """Collapse ``seed`` and ``keys`` into a fresh 32-bit integer seed."""
    return int(_sequence(seed, keys).generate_state(1)[0])
