"""Exact communication-cost ledger for the training protocol.

Upstream (party -> server) traffic carries masked quantized values; each one is
metered at the signed bit width that provably covers the masked-value range
(-(M-1)*b, M*b). Downstream (server -> party) traffic carries embedding-sum
gradients, metered at a fixed float width (32 bits by default) even though the
simulator moves 64-bit reals in memory: the meter models the wire format, not
the in-process representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "DEFAULT_FLOAT_BITS",
    "CommLedger",
    "IterationBits",
    "masked_value_bits",
    "upstream_bits_per_iter",
    "downstream_bits_per_iter",
    "npq_bits_per_iter",
]

DEFAULT_FLOAT_BITS = 32


def masked_value_bits(parties: int, trials: int) -> int:
    """Signed bit width of one masked quantized value: ceil(log2((2M-1)*b)) + 1.

    Covers the open range (-(M-1)*b, M*b) of masked values, sign bit included.
    With a single party the same formula degrades to ceil(log2(b)) + 1.
    """
    if parties < 1 or trials < 1:
        raise ValueError(f"parties and trials must be positive, got {parties}, {trials}")
    return math.ceil(math.log2((2 * parties - 1) * trials)) + 1


def upstream_bits_per_iter(batch: int, parties: int, embed_dim: int, trials: int) -> int:
    """Bits for all parties' masked embedding batches in one iteration: B*M*P*w."""
    _check_positive(batch=batch, parties=parties, embed_dim=embed_dim, trials=trials)
    return batch * parties * embed_dim * masked_value_bits(parties, trials)


def downstream_bits_per_iter(
    batch: int, parties: int, embed_dim: int, float_bits: int = DEFAULT_FLOAT_BITS
) -> int:
    """Bits for broadcasting the embedding-sum gradient to all parties: B*M*P*F."""
    _check_positive(batch=batch, parties=parties, embed_dim=embed_dim)
    if float_bits < 0:
        raise ValueError(f"float_bits must be non-negative, got {float_bits}")
    return batch * parties * embed_dim * float_bits


def npq_bits_per_iter(
    batch: int, parties: int, embed_dim: int, float_bits: int = DEFAULT_FLOAT_BITS
) -> int:
    """Bits per iteration for the no-quantization baseline: full floats both ways."""
    _check_positive(batch=batch, parties=parties, embed_dim=embed_dim)
    if float_bits < 0:
        raise ValueError(f"float_bits must be non-negative, got {float_bits}")
    return 2 * batch * parties * embed_dim * float_bits


def _check_positive(**kwargs: int) -> None:
    for name, value in kwargs.items():
        if value < 1:
            raise ValueError(f"{name} must be positive, got {value}")


@dataclass
class IterationBits:
    """Bits charged within one iteration."""

    up: int
    down: int
    cumulative: int


@dataclass
class CommLedger:
    """Single-writer cumulative bit meter with per-iteration snapshots.

    Parties and the server report sends through `charge`; the experiment loop
    calls `end_iteration` once per iteration to snapshot the increments.
    """

    up_bits: int = 0
    down_bits: int = 0
    iterations: list[IterationBits] = field(default_factory=list)
    _iter_up: int = 0
    _iter_down: int = 0

    def charge(self, direction: str, bits: int) -> None:
        if bits < 0:
            raise ValueError(f"bits must be non-negative, got {bits}")
        if direction == "up":
            self.up_bits += bits
            self._iter_up += bits
        elif direction == "down":
            self.down_bits += bits
            self._iter_down += bits
        else:
            raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")

    @property
    def total_bits(self) -> int:
        return self.up_bits + self.down_bits

    def end_iteration(self) -> IterationBits:
        snap = IterationBits(up=self._iter_up, down=self._iter_down, cumulative=self.total_bits)
        self.iterations.append(snap)
        self._iter_up = 0
        self._iter_down = 0
        return snap
