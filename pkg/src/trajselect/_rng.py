"""Keyed random streams.

Every stochastic draw in the package goes through :func:`keyed_rng`, so a
stream depends only on ``(seed, purpose, *index)`` and never on how many
draws happened elsewhere. Generation can then run in any order.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("rng key parts must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def keyed_rng(seed: int, purpose: str, *index) -> np.random.Generator:
    entropy = [_key(seed), _key(purpose), *(_key(i) for i in index)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
