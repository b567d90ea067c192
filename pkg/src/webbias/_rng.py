"""Seed derivation.

Every random stream is derived from one top-level integer seed plus a tuple
of labels: ``SeedSequence([seed, crc32(label_1), crc32(label_2), ...])``.
Integer labels are used as-is. Streams for different labels are independent,
so adding an application to a dataset never changes another application's
sample.
"""

import zlib

import numpy as np


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), *(_label_key(lb) for lb in labels)])


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
