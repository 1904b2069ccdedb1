"""Named, reproducible random streams.

Every stochastic site (init, dropout masks, batch sampling, splits,
generation) draws from a stream obtained by name. Streams are backed by
the counter-based Philox generator; the 128-bit key is derived from
``(seed, name)`` so streams are independent of creation order, and two
runs with the same seed consume identical randomness at every site.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(seed: int, name: str) -> int:
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class RngHub:
    """Factory for named generators under one experiment seed.

    Calling ``stream(name)`` twice returns two generators that emit the
    same sequence; hold on to the instance when draws must be sequential.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, name: str) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=stream_key(self.seed, name)))
