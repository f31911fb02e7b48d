"""Deterministic random primitives used by the perturbation transforms.

Image-level randomness must reproduce bit-for-bit across runs, platforms
and schedulings, so the shuffle used by the jigsaw transform is pinned to
an explicit, documented algorithm rather than whatever a library happens
to ship:

* stream generator: splitmix64 (Steele et al. constants). State advances
  by the 64-bit golden-ratio increment; each output is the finalized mix
  of the new state. Everything is modulo 2**64.
* bounded draws: rejection sampling on the top of the 64-bit range, so
  ``randbelow(n)`` is exactly uniform for every ``n``.
* permutations: Fisher-Yates, iterating from the last index down.

Per-image seeds are derived as ``global_seed XOR fnv1a64(image_id)`` so a
batch can be processed in any order, or in parallel, without changing any
single output.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of ``text`` encoded as UTF-8."""
    acc = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        acc ^= byte
        acc = (acc * 0x100000001B3) & _MASK64
    return acc


def per_image_seed(global_seed: int, image_id: str) -> int:
    """Stable per-image seed: ``global_seed XOR fnv1a64(image_id)``."""
    return (global_seed & _MASK64) ^ fnv1a64(image_id)


class SplitMix64:
    """splitmix64 stream with unbiased bounded draws and Fisher-Yates shuffle."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle, last index first."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        """A fresh uniform permutation of ``range(n)``."""
        perm = list(range(n))
        self.shuffle(perm)
        return perm
