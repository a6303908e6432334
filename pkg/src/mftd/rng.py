"""Counter-based random streams derived from one master seed.

Every consumer asks for ``stream(master, purpose, *counters)``; the result
depends only on those integers, so evaluation order and restarts never
change what a stream produces.
"""

import numpy as np

STREAM_LOWFI_START = 1
STREAM_VAE_INIT = 2
STREAM_VAE_BATCH = 3
STREAM_CROSSOVER = 4
STREAM_EPSILON = 5


def stream(master: int, purpose: int, *counters: int) -> np.random.Generator:
    key = (int(purpose),) + tuple(int(c) for c in counters)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(master), spawn_key=key)))
