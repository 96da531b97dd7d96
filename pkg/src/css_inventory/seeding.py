"""Named sub-seeds: every component derives its RNG from one top-level seed.

The derivation is ``seed XOR crc32(name)`` applied once per name in the
path, so ``rng(7, "simulator", "noise")`` is stable across runs and Python
versions (``hash()`` is salted, crc32 is not).
"""

import zlib

import numpy as np


def sub_seed(seed: int, *names) -> int:
    s = int(seed) & 0xFFFFFFFF
    for name in names:
        s ^= zlib.crc32(str(name).encode())
        # mix so that XOR of two names cannot cancel out
        s = (s * 0x9E3779B1 + 0x7F4A7C15) & 0xFFFFFFFF
    return s


def rng(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(sub_seed(seed, *names))
