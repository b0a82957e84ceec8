"""Counter-based random streams derived from a single master seed.

Every consumer asks for ``stream(seed, *keys)``; the keys (strings or
integers) become the spawn key of a ``SeedSequence``, so a stream depends
only on ``(seed, keys)`` and never on how many draws other consumers made.
"""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def seed_sequence(seed, *keys):
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))


def stream(seed, *keys):
    """An independent Philox generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def derive_seed(seed, *keys):
    """A 63-bit integer seed for ``(seed, *keys)``, for replaying single runs."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint64)[0] >> np.uint64(1))
