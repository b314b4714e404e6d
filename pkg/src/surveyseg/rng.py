"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator. Streams are keyed by
``(seed, *stream_ids)`` through a ``SeedSequence`` so that, e.g., restart ``r``
of a clustering run always sees the same numbers no matter how many restarts
run or in which order.
"""

import numpy as np

RNG_ALGORITHM = "numpy.PCG64/SeedSequence"

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    key = [int(seed) & _MASK64, *(int(s) & _MASK64 for s in stream)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
