"""Named random streams split off one root seed.

Each consumer asks for its own stream by name, so adding a new consumer
never shifts the numbers an existing one sees.
"""

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
