"""Named, reproducible random streams.

Every stochastic step in the package (weight init, shuffling, dropout,
subsampling) draws from its own stream keyed by ``(global_seed, name)``.
Streams are backed by Philox, a counter-based 64-bit generator, so two
runs with the same seed produce bit-identical results on any platform,
independent of how many draws other streams have made.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, name: str) -> np.ndarray:
    """Derive a 128-bit Philox key from a global seed and a stream name."""
    digest = hashlib.blake2b(
        f"{seed}:{name}".encode("utf-8"), digest_size=16
    ).digest()
    return np.frombuffer(digest, dtype=np.uint64)


def stream(seed: int, name: str) -> np.random.Generator:
    """Create the named generator for ``(seed, name)``.

    Generators advance as they are drawn from; call sites that need a
    fresh, position-independent stream should use a new name rather
    than re-creating one mid-run.
    """
    return np.random.Generator(np.random.Philox(key=stream_key(seed, name)))


def derive_seed(seed: int, name: str) -> int:
    """Fold ``(seed, name)`` into a stable 64-bit sub-seed."""
    digest = hashlib.blake2b(
        f"{seed}:{name}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")
