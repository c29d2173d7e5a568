"""Seeded random number generator with a fixed, portable algorithm.

All impairment draws (packet loss, jitter) and test stimuli come from this
generator so that golden vectors are reproducible bit-exactly across runs,
platforms, and reimplementations.

Algorithm
---------
State update is xorshift64*:

    s ^= s >> 12;  s ^= s << 25 (mod 2^64);  s ^= s >> 27
    output = (s * 0x2545F4914F6CDD1D) mod 2^64

Seeding runs the raw 64-bit seed through one splitmix64 step, which maps
seed 0 to a nonzero state and decorrelates small consecutive seeds:

    z = (seed + 0x9E3779B97F4A7C15) mod 2^64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    state = z ^ (z >> 31)        (state 1 if this is 0)

Derived draws:

    uniform_unit()        = next_u64() >> 11, scaled by 2^-53  (in [0, 1))
    uniform_int(lo, hi)   = lo + next_u64() mod (hi - lo + 1)  (inclusive)
    chance(p)             = uniform_unit() < p

The modulo in ``uniform_int`` is biased for spans approaching 2^64; all
spans used here are tiny (jitter windows, pixel values), where the bias is
below 2^-50 and irrelevant.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def splitmix64(seed: int) -> int:
    """One splitmix64 output for the given 64-bit input."""
    z = (seed + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, stream_id: int) -> int:
    """Per-stream seed so independent draws never share a sequence."""
    return splitmix64((master_seed & _MASK64) ^ splitmix64(stream_id & _MASK64))


class Rng:
    """xorshift64* stream seeded through splitmix64."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        state = splitmix64(seed & _MASK64)
        self.state = state if state != 0 else 1

    def next_u64(self) -> int:
        s = self.state
        s ^= s >> 12
        s ^= (s << 25) & _MASK64
        s ^= s >> 27
        self.state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK64

    def uniform_unit(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def chance(self, p: float) -> bool:
        """True with probability p (one uniform_unit draw, always consumed)."""
        return self.uniform_unit() < p
