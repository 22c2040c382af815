"""Named random sub-streams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for component ``name``; same (seed, name, extra) -> same stream."""
    key = [int(seed), zlib.crc32(name.encode()), *map(int, extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))
