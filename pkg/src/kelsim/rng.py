"""xorshift64* generator, so test-function placements are reproducible across implementations.

State update on the unsigned 64-bit state x (all arithmetic mod 2^64):

    x ^= x >> 12
    x ^= x << 25
    x ^= x >> 27
    out = x * 0x2545F4914F6CDD1D

A zero seed is replaced by 0x9E3779B97F4A7C15 (xorshift has no zero state).
``uniform()`` maps the top 53 bits of ``out`` to [0, 1): (out >> 11) * 2^-53.
"""

from __future__ import annotations

MASK = (1 << 64) - 1
MULT = 0x2545F4914F6CDD1D
ZERO_SEED = 0x9E3779B97F4A7C15


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = (int(seed) & MASK) or ZERO_SEED

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK
        x ^= x >> 27
        self.state = x
        return (x * MULT) & MASK

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)
