"""Seeded random streams.

Every stochastic step draws from a ``numpy.random.Generator`` backed by
PCG64. Streams are derived from a ``SeedSequence`` whose spawn key is the
tuple ``(replicate_index, purpose, *extra)``, so any replicate can be
re-generated in isolation and different purposes never share draws.
"""

from __future__ import annotations

import zlib

import numpy as np

# Fixed integer codes keep spawn keys stable across Python sessions
# (``hash`` of a str is salted per process).
PURPOSES = {
    "network": 1,
    "train": 2,
    "test": 3,
    "misspec": 4,
    "forest": 5,
    "forest_features": 6,
    "tree": 7,
    "generic": 8,
}


def purpose_code(purpose: str | int) -> int:
    if isinstance(purpose, int):
        return purpose
    try:
        return PURPOSES[purpose]
    except KeyError:
        # crc32 is deterministic, unlike hash()
        return 1000 + zlib.crc32(purpose.encode("utf-8"))


def substream(base_seed: int, replicate: int, purpose: str | int, *extra: int) -> np.random.Generator:
    """Return the generator for ``(base_seed, replicate, purpose, *extra)``."""
    key = (int(replicate), purpose_code(purpose)) + tuple(int(e) for e in extra)
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)
