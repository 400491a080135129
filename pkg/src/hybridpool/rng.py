"""Deterministic, portable randomness.

Every random draw in the toolkit goes through a Philox 4x64 counter-based
stream whose 128-bit key is derived by SHA-256 from a global seed plus
string context parts (topic id, doc id, execution index, ...).  Sampling
primitives consume raw 64-bit outputs directly, so results are bit-identical
across platforms and library versions.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def derive_key(*parts: object) -> int:
    """128-bit key from a canonical encoding of the context parts."""
    material = "\x1f".join("" if p is None else str(p) for p in parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "big")


class Stream:
    """Thin wrapper over the raw Philox bit stream."""

    def __init__(self, *parts: object):
        self._bits = np.random.Philox(key=derive_key(*parts))

    def next_u64(self) -> int:
        return int(self._bits.random_raw())

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection on raw 64-bit words."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (2**64 // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 bits of entropy."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def sample_without_replacement(self, items: Sequence[T], k: int) -> list[T]:
        """Partial Fisher-Yates draw of k items, in draw order.

        Returns all items (shuffled) when k >= len(items).
        """
        pool = list(items)
        k = min(k, len(pool))
        out: list[T] = []
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out
