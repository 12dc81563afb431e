"""Counter-based deterministic random streams.

Every random decision in the simulator is a pure function of a 64-bit stream
seed and a draw counter, built on the SplitMix64 output function.  Stream
seeds are derived from (master_seed, device_id, epoch, inner_iteration), so
results do not depend on scheduling or call interleaving.

This module is the plain-Python reference; `kernels` re-implements the same
arithmetic on uint64 for the hot loops, and the two are tested for bit
equality.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

# SplitMix64 constants (Steele, Lea, Flood; same as java.util.SplittableRandom).
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_MUL_1 = 0xBF58476D1CE4E5B9
_MIX_MUL_2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """SplitMix64 finalizer: bijective avalanche mix of a 64-bit word."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * _MIX_MUL_1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX_MUL_2) & MASK64
    return (x ^ (x >> 31)) & MASK64


def derive_seed(master_seed: int, *fields: int) -> int:
    """Derive a stream seed from a master seed and integer context fields.

    The chain is h = mix64(master); h = mix64((h + GOLDEN_GAMMA) ^ field) for
    each field in order.  Distinct field tuples give distinct chains except
    for 2^-64-scale accidents.
    """
    h = mix64(master_seed)
    for f in fields:
        h = mix64(((h + GOLDEN_GAMMA) & MASK64) ^ (f & MASK64))
    return h


class CounterStream:
    """Stateful view of the counter-based stream for seed `seed`.

    Draw j (0-based) is mix64(seed + (j+1)*GOLDEN_GAMMA), which is exactly
    the SplitMix64 output sequence started from state `seed`.
    """

    __slots__ = ("_seed", "_count")

    def __init__(self, seed: int):
        self._seed = seed & MASK64
        self._count = 0

    @property
    def draws(self) -> int:
        return self._count

    def next_raw(self) -> int:
        """Next raw 64-bit word."""
        self._count += 1
        return mix64((self._seed + self._count * GOLDEN_GAMMA) & MASK64)

    def next_uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_raw() >> 11) * 2.0 ** -53

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection, exactly unbiased."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (MASK64 + 1 - bound) % bound
        while True:
            u = self.next_raw()
            if u >= threshold:
                return u % bound
