"""Pairwise-mask secure aggregation of integer secrets.

Every unordered pair of parties shares a seed. Each round, each direction of
each pair derives a fresh pseudo-random stream of integers in [0, mask_range);
party m adds u[m, m'] - u[m', m] to its secret for every peer m'. The masks
cancel pairwise, so a server that adds all masked values recovers exactly the
sum of the secrets while each individual value stays pseudo-random.

Arithmetic is plain signed 64-bit (no modular wraparound): with the small
mask_range and party counts used here the masked values provably stay inside
(-(M-1)*mask_range, M*mask_range), which also fixes the transmitted bit width.
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ProtocolError

__all__ = [
    "PairwiseSeed",
    "MaskedShare",
    "CommChannel",
    "deal_pairwise_seeds",
    "derive_mask_stream",
    "pair_perturbation",
    "mask",
    "mask_batch",
    "unmask_sum",
    "unmask_sum_batch",
    "write_transcript",
    "read_transcript",
]


@dataclass(frozen=True)
class PairwiseSeed:
    """One shared 64-bit seed per unordered pair of parties (party_a < party_b)."""

    party_a: int
    party_b: int
    seed: int

    def __post_init__(self) -> None:
        if not 0 <= self.party_a < self.party_b:
            raise ValueError(
                f"pair must satisfy 0 <= party_a < party_b, got ({self.party_a}, {self.party_b})"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def peer_of(self, party: int) -> int:
        if party == self.party_a:
            return self.party_b
        if party == self.party_b:
            return self.party_a
        raise ValueError(f"party {party} is not a member of pair ({self.party_a}, {self.party_b})")


@dataclass(frozen=True)
class MaskedShare:
    """A single masked value y for one (round, sample, coordinate) cell."""

    party: int
    value: int
    round_idx: int
    sample: int
    coord: int


def deal_pairwise_seeds(parties: int, rng: np.random.Generator) -> dict[tuple[int, int], PairwiseSeed]:
    """Trusted-setup step: draw one seed per unordered pair of party ids."""
    if parties < 1:
        raise ValueError(f"parties must be a positive integer, got {parties!r}")
    seeds: dict[tuple[int, int], PairwiseSeed] = {}
    for a in range(parties):
        for b_ in range(a + 1, parties):
            raw = int(rng.integers(0, 2**64, dtype=np.uint64))
            seeds[(a, b_)] = PairwiseSeed(a, b_, raw)
    return seeds


def _stream_rng(pair: PairwiseSeed, sender: int, round_idx: int) -> np.random.Generator:
    receiver = pair.peer_of(sender)
    if round_idx < 0:
        raise ValueError(f"round_idx must be non-negative, got {round_idx}")
    entropy = (pair.seed, sender, receiver, round_idx)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_mask_stream(
    pair: PairwiseSeed, sender: int, round_idx: int, count: int, mask_range: int
) -> np.ndarray:
    """Directed mask stream u[sender -> receiver] for one round.

    Deterministic in (pair.seed, sender, round_idx): both members of the pair
    derive identical streams for identical arguments, and the i-th element is
    the mask for coordinate counter i. Values are int64 in [0, mask_range).
    """
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if mask_range < 1:
        raise ValueError(f"mask_range must be a positive integer, got {mask_range}")
    rng = _stream_rng(pair, sender, round_idx)
    return rng.integers(0, mask_range, size=count, dtype=np.int64)


def pair_perturbation(
    pair: PairwiseSeed, party: int, round_idx: int, count: int, mask_range: int
) -> np.ndarray:
    """Additive perturbation u[party, peer] - u[peer, party]; antisymmetric in the pair."""
    peer = pair.peer_of(party)
    outgoing = derive_mask_stream(pair, party, round_idx, count, mask_range)
    incoming = derive_mask_stream(pair, peer, round_idx, count, mask_range)
    return outgoing - incoming


def _seeds_for_party(party: int, parties: int, seeds: Iterable[PairwiseSeed]) -> list[PairwiseSeed]:
    by_peer: dict[int, PairwiseSeed] = {}
    for s in seeds:
        if party not in (s.party_a, s.party_b):
            continue
        peer = s.peer_of(party)
        if peer in by_peer:
            raise ValueError(f"duplicate pair seed for parties ({party}, {peer})")
        by_peer[peer] = s
    missing = [p for p in range(parties) if p != party and p not in by_peer]
    if missing:
        raise ValueError(f"party {party} is missing pair seeds for peers {missing}")
    return [by_peer[p] for p in sorted(by_peer)]


def mask_batch(
    secrets: np.ndarray,
    party: int,
    parties: int,
    seeds: Iterable[PairwiseSeed],
    round_idx: int,
    mask_range: int,
) -> np.ndarray:
    """Mask a flat int array of secrets for one round; element i uses counter i.

    secrets must lie in [0, mask_range] (the quantizer's inclusive output
    range). Returns int64 y values in (-(parties-1)*mask_range, parties*mask_range).
    """
    q = np.asarray(secrets, dtype=np.int64).ravel()
    if q.size and (q.min() < 0 or q.max() > mask_range):
        raise ValueError(f"secrets must lie in [0, {mask_range}]")
    if not 0 <= party < parties:
        raise ValueError(f"party {party} out of range for {parties} parties")
    y = q.copy()
    for pair in _seeds_for_party(party, parties, seeds):
        y += pair_perturbation(pair, party, round_idx, q.size, mask_range)
    return y


def mask(
    q: int,
    party: int,
    parties: int,
    seeds: Iterable[PairwiseSeed],
    round_idx: int,
    mask_range: int,
    sample: int = 0,
    coord: int = 0,
    counter: int = 0,
) -> MaskedShare:
    """Mask a single secret; `counter` is its position in the round's stream."""
    if counter < 0:
        raise ValueError(f"counter must be non-negative, got {counter}")
    if not 0 <= q <= mask_range:
        raise ValueError(f"secret {q} must lie in [0, {mask_range}]")
    y = int(q)
    for pair in _seeds_for_party(party, parties, seeds):
        y += int(pair_perturbation(pair, party, round_idx, counter + 1, mask_range)[counter])
    return MaskedShare(party=party, value=y, round_idx=round_idx, sample=sample, coord=coord)


def unmask_sum(shares: Sequence[MaskedShare], parties: int, mask_range: int) -> int:
    """Recover the exact sum of secrets from all parties' shares of one cell."""
    if len(shares) != parties:
        raise ProtocolError(f"expected {parties} shares, got {len(shares)}")
    seen = {s.party for s in shares}
    if seen != set(range(parties)):
        raise ProtocolError(f"share parties {sorted(seen)} != expected {list(range(parties))}")
    cells = {(s.round_idx, s.sample, s.coord) for s in shares}
    if len(cells) != 1:
        raise ProtocolError(f"shares mix distinct cells: {sorted(cells)}")
    total = sum(s.value for s in shares)
    if not 0 <= total <= mask_range * parties:
        raise ProtocolError(
            f"unmasked sum {total} outside [0, {mask_range * parties}]; corrupt transcript"
        )
    return total


def unmask_sum_batch(
    shares_by_party: dict[int, np.ndarray], parties: int, mask_range: int
) -> np.ndarray:
    """Vectorized unmask over equal-length flat arrays of masked values."""
    if set(shares_by_party) != set(range(parties)):
        raise ProtocolError(
            f"share parties {sorted(shares_by_party)} != expected {list(range(parties))}"
        )
    arrays = [np.asarray(shares_by_party[p], dtype=np.int64).ravel() for p in range(parties)]
    size = arrays[0].size
    if any(a.size != size for a in arrays):
        raise ProtocolError("parties sent share batches of different lengths")
    total = np.sum(arrays, axis=0)
    if size and (total.min() < 0 or total.max() > mask_range * parties):
        raise ProtocolError(
            f"unmasked sums outside [0, {mask_range * parties}]; corrupt transcript"
        )
    return total


class CommChannel:
    """In-process message queues between parties and the server, with a bit meter.

    Messages are delivered exactly once and in send order per sender; delivery
    order across senders is unspecified and callers must not rely on it. Every
    send reports its payload size through `meter(direction, bits)` where
    direction is "up" (party -> server) or "down" (server -> party).
    """

    def __init__(self, meter: Callable[[str, int], None] | None = None) -> None:
        self._meter = meter
        self._lock = threading.Lock()
        self._server_inbox: deque[tuple[int, Any]] = deque()
        self._party_inboxes: dict[int, deque[Any]] = {}

    def send_to_server(self, sender: int, payload: Any, bits: int) -> None:
        with self._lock:
            self._server_inbox.append((sender, payload))
        if self._meter is not None:
            self._meter("up", bits)

    def recv_all_at_server(self, expected: int) -> dict[int, Any]:
        """Barrier receive: drain exactly `expected` messages, keyed by sender."""
        with self._lock:
            if len(self._server_inbox) != expected:
                raise ProtocolError(
                    f"server expected {expected} messages, found {len(self._server_inbox)}"
                )
            got: dict[int, Any] = {}
            while self._server_inbox:
                sender, payload = self._server_inbox.popleft()
                if sender in got:
                    raise ProtocolError(f"duplicate message from party {sender}")
                got[sender] = payload
        return got

    def peek_server_inbox(self) -> list[tuple[int, Any]]:
        """Snapshot of undelivered (sender, payload) pairs, for audit taps.

        Does not consume messages; delivery semantics are unchanged.
        """
        with self._lock:
            return list(self._server_inbox)

    def send_to_party(self, receiver: int, payload: Any, bits: int) -> None:
        with self._lock:
            self._party_inboxes.setdefault(receiver, deque()).append(payload)
        if self._meter is not None:
            self._meter("down", bits)

    def recv_at_party(self, receiver: int) -> Any:
        with self._lock:
            inbox = self._party_inboxes.get(receiver)
            if not inbox:
                raise ProtocolError(f"party {receiver} has no pending message")
            return inbox.popleft()


# Transcript record: (round u32, party u16, sample u32, coord u16, value i64),
# little-endian, fixed width. Used for audit dumps of every transmitted share.
_RECORD = struct.Struct("<IHIHq")


def write_transcript(path: str, shares: Iterable[MaskedShare]) -> int:
    """Append-free binary dump of shares; returns the number of records written."""
    n = 0
    with open(path, "wb") as fh:
        for s in shares:
            if not (0 <= s.round_idx < 2**32 and 0 <= s.sample < 2**32):
                raise ValueError(f"round/sample out of u32 range in {s}")
            if not (0 <= s.party < 2**16 and 0 <= s.coord < 2**16):
                raise ValueError(f"party/coord out of u16 range in {s}")
            fh.write(_RECORD.pack(s.round_idx, s.party, s.sample, s.coord, s.value))
            n += 1
    return n


def read_transcript(path: str) -> list[MaskedShare]:
    """Parse a transcript dump back into MaskedShare records."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) % _RECORD.size != 0:
        raise ProtocolError(
            f"transcript {path} length {len(blob)} is not a multiple of {_RECORD.size}"
        )
    out = []
    for round_idx, party, sample, coord, value in _RECORD.iter_unpack(blob):
        out.append(
            MaskedShare(party=party, value=value, round_idx=round_idx, sample=sample, coord=coord)
        )
    return out
