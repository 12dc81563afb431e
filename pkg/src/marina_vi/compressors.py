"""Unbiased compression operators and their exact contract constants.

Three operators: identity (no compression), rand_k (uniform random k-subset,
rescaled by d/k), and int8_quant (per-vector max-abs scale with stochastic
rounding to signed 8-bit levels).  Each satisfies E[C(u)] = u and
E||C(u) - u||^2 <= alpha * ||u||^2 with the alpha reported here.

This module is the plain reference implementation driven by rng.CounterStream;
`kernels._compress_add` executes the same draw sequence inside the hot loop
and is tested for bit equality against `compress`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .rng import CounterStream

KINDS = ("identity", "rand_k", "int8_quant")

_INT8_LEVELS = 127  # symmetric signed-8-bit grid, zero included


@dataclass(frozen=True)
class CompressorSpec:
    """Compressor kind plus its ambient dimension (and k for rand_k)."""
    kind: str
    d: int
    k: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown compressor kind {self.kind!r}; "
                             f"expected one of {KINDS}")
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.kind == "rand_k":
            if self.k is None or not 1 <= self.k <= self.d:
                raise ValueError(
                    f"rand_k requires 1 <= k <= d, got k={self.k}, d={self.d}")
        elif self.k is not None:
            raise ValueError(f"{self.kind} takes no k parameter")

    @property
    def alpha(self) -> float:
        """Variance factor: E||C(u) - u||^2 <= alpha * ||u||^2."""
        if self.kind == "identity":
            return 0.0
        if self.kind == "rand_k":
            return self.d / self.k - 1.0
        # Stochastic rounding wastes at most (s/2)^2 per coordinate with
        # s = max|u_j|/127 and max|u_j|^2 <= ||u||^2, hence d/(4*127^2).
        return self.d / (4.0 * _INT8_LEVELS * _INT8_LEVELS)

    @property
    def delta_fraction(self) -> Fraction:
        """Information fraction retained by one message, as an exact rational."""
        if self.kind == "identity":
            return Fraction(1)
        if self.kind == "rand_k":
            return Fraction(self.k, self.d)
        return Fraction(1, 4)

    @property
    def delta(self) -> float:
        return float(self.delta_fraction)

    @property
    def payload_bits(self) -> int:
        """Wire cost of one message under the documented encoding convention.

        Values are 32-bit floats; sparse messages pay ceil(log2 d) index bits
        per kept entry; quantized messages pay 8 bits per coordinate plus one
        32-bit scale word.
        """
        if self.kind == "identity":
            return 32 * self.d
        if self.kind == "rand_k":
            index_bits = (self.d - 1).bit_length()
            return self.k * (32 + index_bits)
        return 8 * self.d + 32


@dataclass(frozen=True)
class CompressedMessage:
    """Decoded dense payload C(u) together with its wire cost in bits."""
    payload: np.ndarray
    wire_bits: int


def compress(spec: CompressorSpec, u: np.ndarray, rng: CounterStream) -> CompressedMessage:
    """Apply the compressor to u, drawing randomness from the given stream.

    Draw conventions (mirrored bit-exactly by the kernel implementation):
    rand_k consumes one bounded draw per selected coordinate via a partial
    Fisher-Yates shuffle; int8_quant consumes one uniform per coordinate in
    ascending order, and none at all for the zero vector; identity consumes
    nothing.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.d,):
        raise ValueError(f"u must have shape ({spec.d},), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("u contains NaN or Inf")
    bits = spec.payload_bits
    if spec.kind == "identity":
        return CompressedMessage(u.copy(), bits)
    if spec.kind == "rand_k":
        d, k = spec.d, spec.k
        perm = list(range(d))
        for t in range(k):
            j = t + rng.next_below(d - t)
            perm[t], perm[j] = perm[j], perm[t]
        payload = np.zeros(d)
        factor = d / k
        for idx in perm[:k]:
            payload[idx] = factor * u[idx]
        return CompressedMessage(payload, bits)
    # int8_quant
    m = float(np.max(np.abs(u)))
    if m == 0.0:
        return CompressedMessage(np.zeros(spec.d), bits)
    s = m / _INT8_LEVELS
    payload = np.empty(spec.d)
    for j in range(spec.d):
        w = u[j] / s
        f = math.floor(w)
        frac = w - f
        q = f + 1 if rng.next_uniform() < frac else f
        if q > _INT8_LEVELS:
            q = _INT8_LEVELS
        elif q < -_INT8_LEVELS:
            q = -_INT8_LEVELS
        payload[j] = s * q
    return CompressedMessage(payload, bits)


def exhaustive_randk_moments(d: int, k: int, u: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact E[C(u)] and E||C(u) - u||^2 for rand_k by subset enumeration.

    Only for d <= 10; every k-subset is weighted equally, which is exactly
    the distribution produced by the Fisher-Yates selection in compress.
    """
    if d > 10:
        raise ValueError("exhaustive enumeration is limited to d <= 10")
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    u = np.asarray(u, dtype=float)
    if u.shape != (d,):
        raise ValueError(f"u must have shape ({d},), got {u.shape}")
    factor = d / k
    mean = np.zeros(d)
    err_moment = 0.0
    count = 0
    for subset in combinations(range(d), k):
        payload = np.zeros(d)
        for idx in subset:
            payload[idx] = factor * u[idx]
        mean += payload
        diff = payload - u
        err_moment += float(diff @ diff)
        count += 1
    return mean / count, err_moment / count
