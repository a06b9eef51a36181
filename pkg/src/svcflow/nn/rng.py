"""Named, counter-based random streams.

Each stochastic consumer (init, noise, t sampling, batching) draws from its
own Philox stream keyed by ``(seed, name)``, so adding draws in one place
never perturbs another.
"""

import zlib

import numpy as np


def make_rng(seed: int, name: str = "default") -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(key))
