"""Bit-exact communication accounting per device and direction.

The ledger tracks cumulative uplink bits per device and the server's
broadcast downlink, maintains an optional event log at (epoch, inner_iter,
direction, device) granularity, and converts totals into full-gradient
equivalents (one gradient equivalent = one uncompressed d-vector per
device).  All counters are Python integers, so totals are exact; gradient
equivalents use exact rationals internally.

The ledger keeps its own position cursor: record_epoch_start opens epoch
s+1 at inner iteration 0, and each inner-round record advances the inner
counter.  For million-round runs the event log can be disabled at
construction; counters remain exact either way.
"""

from __future__ import annotations

import csv
from fractions import Fraction
from pathlib import Path

from .compressors import CompressorSpec

FULL_VALUE_BITS = 32  # fp-32 baseline for uncompressed values

SERVER_DEVICE_ID = -1  # device column value for server broadcast events


def gradient_equivalents(spec: CompressorSpec, inner_iters: int) -> float:
    """Per-epoch per-device communication in units of one full gradient.

    One full synchronization plus (K-1) compressed rounds at fraction delta:
    1 + delta * (K - 1).
    """
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    return 1.0 + spec.delta * (inner_iters - 1)


def gradient_equivalents_exact(spec: CompressorSpec, inner_iters: int) -> Fraction:
    """Exact-rational form of gradient_equivalents."""
    if inner_iters < 1:
        raise ValueError("inner_iters must be >= 1")
    return 1 + spec.delta_fraction * (inner_iters - 1)


class CommLedger:
    """Cumulative bit counters plus an optional replayable event log."""

    def __init__(self, n: int, record_events: bool = True):
        if n < 1:
            raise ValueError("need n >= 1 devices")
        self.n = n
        self.per_device_uplink_bits: list[int] = [0] * n
        self.server_downlink_bits: int = 0
        self.events: list[tuple[int, int, str, int, int]] | None = \
            [] if record_events else None
        # Gradient-equivalent bookkeeping, exact by construction.
        self.full_syncs: list[int] = [0] * n
        self.compressed_rounds: list[int] = [0] * n
        self._epoch = 0
        self._inner = 0

    def _check_n(self, n: int) -> None:
        if n != self.n:
            raise ValueError(f"ledger tracks {self.n} devices, got n={n}")

    def record_epoch_start(self, n: int, d: int) -> None:
        """Full uncompressed uplink of d values from every device."""
        self._check_n(n)
        self._epoch += 1
        self._inner = 0
        bits = FULL_VALUE_BITS * d
        for i in range(n):
            self.per_device_uplink_bits[i] += bits
            self.full_syncs[i] += 1
            if self.events is not None:
                self.events.append((self._epoch, 0, "uplink", i, bits))

    def record_inner_round(self, spec: CompressorSpec, n: int, d: int) -> None:
        """One compressed uplink per device plus the server broadcast."""
        self.record_inner_rounds(spec, n, d, 1)

    def record_inner_rounds(self, spec: CompressorSpec, n: int, d: int,
                            count: int) -> None:
        """Batched form of record_inner_round; additive in count."""
        self._check_n(n)
        if count < 0:
            raise ValueError("count must be non-negative")
        if count == 0:
            return
        up = spec.payload_bits
        down = FULL_VALUE_BITS * d
        if self.events is not None:
            for _ in range(count):
                self._inner += 1
                for i in range(n):
                    self.events.append((self._epoch, self._inner, "uplink", i, up))
                self.events.append(
                    (self._epoch, self._inner, "downlink", SERVER_DEVICE_ID, down))
        else:
            self._inner += count
        for i in range(n):
            self.per_device_uplink_bits[i] += up * count
            self.compressed_rounds[i] += count
        self.server_downlink_bits += down * count

    def total_uplink_bits(self) -> int:
        return sum(self.per_device_uplink_bits)

    def replay_from_events(self) -> tuple[list[int], int]:
        """Recompute (per-device uplink, server downlink) from the event log."""
        if self.events is None:
            raise ValueError("event recording was disabled for this ledger")
        uplink = [0] * self.n
        downlink = 0
        for _epoch, _inner, direction, device, bits in self.events:
            if direction == "uplink":
                uplink[device] += bits
            else:
                downlink += bits
        return uplink, downlink

    def gradient_equivalent_totals(self, spec: CompressorSpec) -> list[Fraction]:
        """Exact per-device communication in gradient equivalents.

        Full syncs count 1 each; compressed rounds count delta(spec) each.
        """
        frac = spec.delta_fraction
        return [self.full_syncs[i] + frac * self.compressed_rounds[i]
                for i in range(self.n)]

    def export_csv(self, path: str | Path) -> None:
        """Write the event log as epoch,inner_iter,direction,device,bits."""
        if self.events is None:
            raise ValueError("event recording was disabled for this ledger")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "inner_iter", "direction", "device", "bits"])
            writer.writerows(self.events)
