"""Deterministic random stream used for every random draw in the package.

The stream contract is fixed so that independent ports produce identical
bits:

* state update: SplitMix64 (gamma 0x9E3779B97F4A7C15, the two canonical
  mixing multipliers, shifts 30/27/31), all arithmetic mod 2**64;
* uniform in [0, 1): top 53 bits of the next u64, scaled by 2**-53;
* standard normal: Box-Muller on two consecutive uniforms, cosine branch
  only, i.e. sqrt(-2*ln(1 - u1)) * cos(2*pi*u2).  Every normal consumes
  exactly two uniforms; the sine companion is never used;
* bounded integer in [0, n): next u64 modulo n;
* shuffle: Fisher-Yates from the top index down, one bounded draw per swap.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0 ** -53


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_gaussian(self) -> float:
        u1 = self.next_float()
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(_TWO_PI * u2)

    def next_uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def next_below(self, n: int) -> int:
        if n < 1:
            raise ValueError(f"next_below requires n >= 1, got {n}")
        return self.next_u64() % n

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for j in range(len(seq) - 1, 0, -1):
            k = self.next_below(j + 1)
            seq[j], seq[k] = seq[k], seq[j]
