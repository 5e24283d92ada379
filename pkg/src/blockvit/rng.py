"""Portable seeded random stream used for all key and weight generation.

Every random quantity in this package is derived from a SplitMix64 word
stream so that a 64-bit seed reproduces identical bytes on any platform:

* 64-bit words: SplitMix64 (Steele, Lea & Flood 2014) over the seed.
* uniforms in [0, 1): top 53 bits of a word divided by 2**53.
* standard normals: Box-Muller on consecutive uniform pairs.
* shuffles: Fisher-Yates, drawing ``word % (i + 1)`` for slot i.

The scalar and the vectorized paths produce the same word sequence; the
vectorized path exploits that SplitMix64's state advances by a fixed
additive constant per word.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2**-53, the spacing of the uniform grid; also the clamp that keeps
# Box-Muller away from log(0).
_U53 = 2.0 ** -53


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic value stream seeded by a 64-bit unsigned integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def words(self, n: int) -> np.ndarray:
        """Next ``n`` 64-bit words as a uint64 array."""
        if n < 0:
            raise ValueError("word count must be >= 0")
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self._state) + idx * np.uint64(_GAMMA)
        self._state = (self._state + n * _GAMMA) & _MASK64
        return _mix_array(states)

    def next_word(self) -> int:
        return int(self.words(1)[0])

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniforms in [0, 1) with 53-bit resolution."""
        return (self.words(n) >> np.uint64(11)).astype(np.float64) * _U53

    def next_uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals; consumes ``2 * ceil(n / 2)`` words."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1 = np.maximum(u[0::2], _U53)
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def randint_below(self, bound: int) -> int:
        """Integer in [0, bound); modulo reduction, bias negligible for
        bound << 2**64 and irrelevant for key secrecy here."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        return self.next_word() % bound

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle, in place; returns the list."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint_below(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
