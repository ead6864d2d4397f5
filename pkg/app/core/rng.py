"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose seed
sequence is ``(master seed, stream kind, key...)``. A draw is therefore a
pure function of its coordinates: it does not depend on the order in which
other streams were consumed, on thread scheduling, or on the input sequence.
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    PRIOR = 0
    PROCESS = 1
    MEASUREMENT = 2
    INPUT = 3
    TRUTH = 4
    FILTER = 5
    ORACLE = 6


def stream(seed: int, kind: Stream, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(kind), *map(int, key)))
    return np.random.Generator(np.random.Philox(seq))
