"""Named random substreams derived from one root seed."""

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for (seed, name, *extra); stable across runs and platforms."""
    key = [int(seed), zlib.crc32(name.encode("utf-8"))] + [int(x) for x in extra]
    return np.random.default_rng(np.random.SeedSequence(key))
