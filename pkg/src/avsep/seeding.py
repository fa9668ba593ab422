"""Deterministic named random streams.

Every piece of randomness in the package flows from one integer seed through
named sub-streams, so runs are reproducible and independent components (data
synthesis, weight init, per-frame MH chains) never share a stream.
"""

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be non-negative, got %r" % (key,))
        return int(key)
    if isinstance(key, str):
        digest = hashlib.blake2s(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    raise TypeError("stream keys must be int or str, got %r" % (key,))


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the sub-stream named by `keys` under the global `seed`.

    Keys may be strings (hashed to stable integers) or non-negative ints; the
    same (seed, keys) always yields the same stream, and distinct key tuples
    yield statistically independent streams.
    """
    spawn_key = tuple(_key_to_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))
