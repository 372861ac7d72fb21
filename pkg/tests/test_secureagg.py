"""Tests for pairwise-mask secure aggregation."""

import math

import numpy as np
import pytest

from pbmvfl import ProtocolError
from pbmvfl.secureagg import (
    CommChannel,
    MaskedShare,
    PairwiseSeed,
    deal_pairwise_seeds,
    derive_mask_stream,
    mask,
    mask_batch,
    pair_perturbation,
    read_transcript,
    unmask_sum,
    unmask_sum_batch,
    write_transcript,
)


def test_pairwise_seed_validation():
    with pytest.raises(ValueError):
        PairwiseSeed(2, 1, 7)
    with pytest.raises(ValueError):
        PairwiseSeed(1, 1, 7)
    with pytest.raises(ValueError):
        PairwiseSeed(0, 1, -1)
    s = PairwiseSeed(0, 3, 123)
    assert s.peer_of(0) == 3 and s.peer_of(3) == 0
    with pytest.raises(ValueError):
        s.peer_of(1)


def test_deal_pairwise_seeds_covers_every_pair():
    seeds = deal_pairwise_seeds(5, np.random.default_rng(0))
    assert set(seeds) == {(a, b) for a in range(5) for b in range(a + 1, 5)}
    assert len({s.seed for s in seeds.values()}) == len(seeds)  # no accidental reuse


def test_derive_mask_stream_deterministic_and_ranged():
    pair = PairwiseSeed(0, 1, 987654321)
    a = derive_mask_stream(pair, 0, round_idx=3, count=64, mask_range=16)
    b = derive_mask_stream(pair, 0, round_idx=3, count=64, mask_range=16)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() < 16
    assert derive_mask_stream(pair, 0, 0, 0, 16).size == 0


def test_derive_mask_stream_fresh_per_round_direction_and_seed():
    rng = np.random.default_rng(5)
    for _ in range(100):
        seed = int(rng.integers(0, 2**64, dtype=np.uint64))
        pair = PairwiseSeed(0, 1, seed)
        base = derive_mask_stream(pair, 0, 0, 64, 128)
        other_round = derive_mask_stream(pair, 0, 1, 64, 128)
        other_dir = derive_mask_stream(pair, 1, 0, 64, 128)
        assert np.any(base != other_round)
        assert np.any(base != other_dir)
        other_seed = PairwiseSeed(0, 1, (seed + 1) % 2**64)
        assert np.any(base != derive_mask_stream(other_seed, 0, 0, 64, 128))


def test_pair_perturbation_antisymmetric():
    pair = PairwiseSeed(2, 5, 42)
    fwd = pair_perturbation(pair, 2, round_idx=7, count=32, mask_range=8)
    bwd = pair_perturbation(pair, 5, round_idx=7, count=32, mask_range=8)
    assert np.array_equal(fwd, -bwd)


def test_mask_single_party_is_identity():
    share = mask(3, party=0, parties=1, seeds=[], round_idx=0, mask_range=4)
    assert share.value == 3


def test_mask_two_parties_hand_composition():
    # y_m = q_m + (u[m, peer] - u[peer, m]) with the derived stream values.
    pair = PairwiseSeed(0, 1, 777)
    u01 = int(derive_mask_stream(pair, 0, round_idx=2, count=1, mask_range=16)[0])
    u10 = int(derive_mask_stream(pair, 1, round_idx=2, count=1, mask_range=16)[0])
    y0 = mask(5, party=0, parties=2, seeds=[pair], round_idx=2, mask_range=16)
    y1 = mask(9, party=1, parties=2, seeds=[pair], round_idx=2, mask_range=16)
    assert y0.value == 5 + (u01 - u10)
    assert y1.value == 9 + (u10 - u01)
    assert y0.value + y1.value == 5 + 9


def test_mask_missing_or_duplicate_seed_errors():
    pair = PairwiseSeed(0, 1, 1)
    with pytest.raises(ValueError, match="missing pair seeds"):
        mask(0, party=0, parties=3, seeds=[pair], round_idx=0, mask_range=4)
    with pytest.raises(ValueError, match="duplicate"):
        mask(0, party=0, parties=2, seeds=[pair, PairwiseSeed(0, 1, 2)], round_idx=0, mask_range=4)


def test_mask_rejects_secret_out_of_range():
    with pytest.raises(ValueError):
        mask(5, party=0, parties=1, seeds=[], round_idx=0, mask_range=4)
    with pytest.raises(ValueError):
        mask_batch(np.array([0, -1]), 0, 1, [], 0, 4)


def test_unmask_sum_recovers_plaintext():
    seeds = deal_pairwise_seeds(3, np.random.default_rng(9))
    secrets = [1, 2, 3]
    shares = [
        mask(secrets[m], m, 3, list(seeds.values()), round_idx=0, mask_range=4)
        for m in range(3)
    ]
    assert unmask_sum(shares, parties=3, mask_range=4) == 6


def test_unmask_sum_zero_secrets():
    seeds = deal_pairwise_seeds(2, np.random.default_rng(10))
    shares = [
        mask(0, m, 2, list(seeds.values()), round_idx=0, mask_range=8) for m in range(2)
    ]
    assert unmask_sum(shares, parties=2, mask_range=8) == 0


def test_unmask_sum_validates_share_sets():
    seeds = deal_pairwise_seeds(2, np.random.default_rng(11))
    shares = [
        mask(1, m, 2, list(seeds.values()), round_idx=0, mask_range=8) for m in range(2)
    ]
    with pytest.raises(ProtocolError):
        unmask_sum(shares[:1], parties=2, mask_range=8)
    with pytest.raises(ProtocolError):
        unmask_sum([shares[0], shares[0]], parties=2, mask_range=8)
    stale = MaskedShare(party=1, value=shares[1].value, round_idx=1, sample=0, coord=0)
    with pytest.raises(ProtocolError):
        unmask_sum([shares[0], stale], parties=2, mask_range=8)
    corrupt = MaskedShare(party=1, value=shares[1].value + 1000, round_idx=0, sample=0, coord=0)
    with pytest.raises(ProtocolError):
        unmask_sum([shares[0], corrupt], parties=2, mask_range=8)


def test_random_configs_recover_exact_sums():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        parties = int(rng.integers(2, 9))
        mask_range = int(rng.integers(2, 129))
        round_idx = int(rng.integers(0, 50))
        n_coords = int(rng.integers(1, 9))
        seeds = deal_pairwise_seeds(parties, rng)
        secrets = rng.integers(0, mask_range + 1, size=(parties, n_coords))
        masked = {
            m: mask_batch(secrets[m], m, parties, list(seeds.values()), round_idx, mask_range)
            for m in range(parties)
        }
        width = math.ceil(math.log2((2 * parties - 1) * mask_range)) + 1
        for m in range(parties):
            assert masked[m].min() > -(parties - 1) * mask_range
            assert masked[m].max() < parties * mask_range
            # every transmitted value fits in the metered signed width
            assert masked[m].min() >= -(2 ** (width - 1))
            assert masked[m].max() < 2 ** (width - 1)
        recovered = unmask_sum_batch(masked, parties, mask_range)
        assert np.array_equal(recovered, secrets.sum(axis=0))


def test_masking_hides_single_secret():
    # Over many random seed deals, one party's transmitted value must not be a
    # deterministic function of its secret, and must span all residues mod b.
    rng = np.random.default_rng(31337)
    mask_range = 8
    values = []
    for _ in range(10_000):
        seeds = deal_pairwise_seeds(2, rng)
        share = mask(5, 0, 2, list(seeds.values()), round_idx=0, mask_range=mask_range)
        values.append(share.value)
    residues = {v % mask_range for v in values}
    assert len(residues) >= mask_range
    assert len(set(values)) > 1


def test_unmask_sum_batch_validates():
    with pytest.raises(ProtocolError):
        unmask_sum_batch({0: np.array([1])}, parties=2, mask_range=4)
    with pytest.raises(ProtocolError):
        unmask_sum_batch(
            {0: np.array([1, 2]), 1: np.array([1])}, parties=2, mask_range=4
        )
    with pytest.raises(ProtocolError):
        unmask_sum_batch(
            {0: np.array([100]), 1: np.array([100])}, parties=2, mask_range=4
        )


def test_comm_channel_exactly_once_in_sender_order():
    metered = []
    ch = CommChannel(meter=lambda direction, bits: metered.append((direction, bits)))
    ch.send_to_server(0, "a0", bits=10)
    ch.send_to_server(1, "b0", bits=12)
    got = ch.recv_all_at_server(expected=2)
    assert got == {0: "a0", 1: "b0"}
    with pytest.raises(ProtocolError):
        ch.recv_all_at_server(expected=1)  # inbox now empty

    ch.send_to_party(1, "g1", bits=7)
    ch.send_to_party(1, "g2", bits=7)
    assert ch.recv_at_party(1) == "g1"
    assert ch.recv_at_party(1) == "g2"
    with pytest.raises(ProtocolError):
        ch.recv_at_party(1)
    assert metered == [("up", 10), ("up", 12), ("down", 7), ("down", 7)]


def test_comm_channel_barrier_and_duplicate_checks():
    ch = CommChannel()
    ch.send_to_server(0, "x", bits=1)
    with pytest.raises(ProtocolError):
        ch.recv_all_at_server(expected=2)
    ch.send_to_server(0, "y", bits=1)
    with pytest.raises(ProtocolError):
        ch.recv_all_at_server(expected=2)  # duplicate sender


def test_transcript_round_trip(tmp_path):
    shares = [
        MaskedShare(party=0, value=-37, round_idx=4, sample=10, coord=3),
        MaskedShare(party=1, value=2**40, round_idx=4, sample=10, coord=3),
        MaskedShare(party=65535, value=0, round_idx=2**32 - 1, sample=2**32 - 1, coord=2**16 - 1),
    ]
    path = tmp_path / "shares.bin"
    assert write_transcript(str(path), shares) == 3
    assert path.stat().st_size == 3 * 20  # fixed 20-byte little-endian records
    assert read_transcript(str(path)) == shares


def test_transcript_rejects_bad_ranges_and_truncation(tmp_path):
    path = tmp_path / "bad.bin"
    with pytest.raises(ValueError):
        write_transcript(str(path), [MaskedShare(0, 0, round_idx=-1, sample=0, coord=0)])
    with pytest.raises(ValueError):
        write_transcript(str(path), [MaskedShare(2**16, 0, round_idx=0, sample=0, coord=0)])
    write_transcript(str(path), [MaskedShare(0, 5, round_idx=0, sample=0, coord=0)])
    with open(path, "ab") as fh:
        fh.write(b"\x00")
    with pytest.raises(ProtocolError):
        read_transcript(str(path))
