"""Deterministic seeding and random streams.

Every random draw in the package flows through a SplitMix64 stream.  Streams
are derived hierarchically from (master seed, purpose labels, indices), so
detaching one consumer never shifts the draws seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _encode(part) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK
    raise TypeError(f"cannot derive a seed from {type(part).__name__}")


def derive(seed: int, *parts) -> int:
    """Fold labels and indices into a fresh 64-bit seed."""
    h = seed & _MASK
    for part in parts:
        h = _mix((h + _GOLDEN + _encode(part)) & _MASK)
    return h


class Stream:
    """Sequential SplitMix64 generator with a few convenience draws."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix(self._state)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        f = (self.u64() >> 11) * 2.0**-53
        return lo + f * (hi - lo)

    def randint(self, n: int) -> int:
        # Modulo bias is negligible for n << 2**64 and irrelevant here:
        # only determinism matters.
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return self.u64() % n

    def choice(self, seq):
        return seq[self.randint(len(seq))]

    def shuffle(self, items: list) -> list:
        """In-place Fisher-Yates shuffle; returns the list for chaining."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order deterministic."""
        if k > n:
            raise ValueError("cannot sample more indices than available")
        pool = list(range(n))
        out = []
        for _ in range(k):
            out.append(pool.pop(self.randint(len(pool))))
        return out

    def permutation(self, n: int) -> list[int]:
        return self.shuffle(list(range(n)))

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Vectorised uniforms; advances the stream by the element count."""
        count = int(np.prod(shape)) if shape else 1
        ks = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        z = np.uint64(self._state) + ks
        self._state = (self._state + count * _GOLDEN) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        f = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (lo + f * (hi - lo)).reshape(shape)
