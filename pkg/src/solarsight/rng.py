"""Deterministic, seedable random number generation.

Every stochastic choice in this package (weight init, dropout, shuffling,
procedural rendering) draws from :class:`SplitMix64`, a 64-bit counter-based
generator: draw ``i`` after seeding is ``mix64(seed + (i + 1) * GAMMA)`` with
all arithmetic modulo 2**64.  Because each output depends only on the seed and
the draw index, blocks of draws can be produced with vectorized numpy while
staying bitwise identical to one-at-a-time generation.

Reference sequence (used by replay tests): ``uniform()`` maps a raw 64-bit
draw ``u`` to ``(u >> 11) * 2**-53``; ``normal()`` consumes two uniforms per
Box-Muller pair and returns cos/sin outputs in that order; ``shuffle`` runs a
descending Fisher-Yates using ``randint``.

Child streams come from :func:`derive_seed`, so per-sample work can be
parallelized (or reordered) without changing any sample's content.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """Finalizing bijection of SplitMix64 on 64-bit integers."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, stream: int) -> int:
    """Derive an independent child seed for stream index ``stream``.

    Defined as ``mix64(seed XOR mix64(stream + GAMMA))``; stable across
    runs and platforms.
    """
    return mix64((seed & _MASK) ^ mix64((stream + _GAMMA) & _MASK))


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class SplitMix64:
    """Counter-based SplitMix64 stream.

    ``draw_u64(n)`` advances the counter by ``n`` and is bitwise equivalent
    to ``n`` successive ``next_u64()`` calls.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64((self.seed + self.counter * _GAMMA) & _MASK)

    def draw_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64_vec(np.uint64(self.seed) + idx * np.uint64(_GAMMA))

    def uniform(self, n: int | None = None):
        """Uniform floats in [0, 1) with 53-bit resolution."""
        if n is None:
            return float(self.next_u64() >> 11) * 2.0**-53
        return (self.draw_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int | None = None):
        """Standard normal draws via Box-Muller (two uniforms per pair)."""
        m = 1 if n is None else int(n)
        pairs = (m + 1) // 2
        u = (self.draw_u64(2 * pairs) >> np.uint64(11)).astype(np.float64)
        u1 = (u[0::2] + 1.0) * 2.0**-53  # in (0, 1], keeps log finite
        u2 = u[1::2] * 2.0**-53
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        if n is None:
            return float(out[0])
        return out[:m]

    def randint(self, bound: int) -> int:
        """Integer in [0, bound). Modulo bias is negligible for bound << 2**64."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates shuffle (descending index order)."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randint(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def child(self, stream: int) -> "SplitMix64":
        return SplitMix64(derive_seed(self.seed, stream))
