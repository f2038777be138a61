"""Hierarchical deterministic random-number streams.

Every random draw in the library comes from a stream addressed by a path of
integers/strings under one master seed.  Identical (seed, address) pairs give
identical draws; distinct addresses give statistically independent streams.
Because streams are counter-based (Philox), particle or run loops can be
reordered or parallelized without changing any output.
"""

import zlib

import numpy as np


def _encode(part):
    if isinstance(part, (bool, float)):
        raise TypeError(f"stream address parts must be int or str, got {part!r}")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream address parts must be non-negative")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream address parts must be int or str, got {part!r}")


class RngStream:
    """A node in the seed tree; ``child`` derives sub-streams, ``generator`` draws."""

    __slots__ = ("seed", "address")

    def __init__(self, seed, address=()):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.address = tuple(address)

    def child(self, *parts):
        return RngStream(self.seed, self.address + tuple(_encode(p) for p in parts))

    def generator(self):
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.address)
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, address={self.address})"
