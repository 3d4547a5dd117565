import math
import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from ppcf.cuckoo import CuckooTable, bits_per_item, candidate_pair, fpr_cuckoo, next_pow2
from ppcf.errors import InvalidInput

keys = st.binary(min_size=1, max_size=16)


def check_placement(table: CuckooTable, inserted) -> None:
    """Every stored fingerprint sits in a candidate bucket of some key that produced it."""
    homes: dict[int, set[int]] = {}
    for key in inserted:
        i1, i2, f = table.candidate_buckets(key)
        homes.setdefault(f, set()).update((i1, i2))
    for idx, bucket in enumerate(table.buckets):
        assert len(bucket) <= table.bucket_size
        for f, c in bucket.items():
            assert c >= 1
            assert idx in homes[f]


def fingerprint_oracle(table: CuckooTable, inserted) -> Counter:
    """Multiset over (unordered candidate pair, fingerprint) keys."""
    out = Counter()
    for key in inserted:
        i1, i2, f = table.candidate_buckets(key)
        out[(frozenset((i1, i2)), f)] += 1
    return out


def test_next_pow2():
    assert [next_pow2(n) for n in (1, 2, 3, 1000, 1024)] == [1, 2, 4, 1024, 1024]
    assert CuckooTable(n_buckets=1000).n_buckets == 1024


def test_golden_candidate_triple():
    table = CuckooTable(n_buckets=16, bucket_size=4, fingerprint_bits=8, seed=0)
    assert table.candidate_buckets(bytes([0x0F])) == (0, 3, 15)


@given(keys, st.integers(0, 2**32), st.integers(0, 12), st.integers(1, 16))
def test_xor_partner_involution(key, seed, log_b, fp_bits):
    table = CuckooTable(n_buckets=1 << log_b, fingerprint_bits=fp_bits, seed=seed)
    i1, i2, f = table.candidate_buckets(key)
    assert 0 < f < 1 << fp_bits
    assert 0 <= i1 < table.n_buckets and 0 <= i2 < table.n_buckets
    assert table.alt_index(i2, f) == i1
    assert table.alt_index(i1, f) == i2


def test_equal_candidates_only_when_partner_hash_vanishes():
    table = CuckooTable(n_buckets=4, fingerprint_bits=8, seed=3)
    seen_equal = False
    for i in range(2000):
        i1, i2, f = table.candidate_buckets(i.to_bytes(4, "little"))
        assert (i1 == i2) == (table.alt_index(0, f) == 0)
        seen_equal |= i1 == i2
    assert seen_equal


def test_non_power_of_two_pair_stays_in_range():
    for i in range(500):
        i1, i2, _ = candidate_pair(i.to_bytes(4, "little"), 10, 16, 1)
        assert 0 <= i1 < 10 and 0 <= i2 < 10


def test_first_insert_goes_to_first_candidate():
    table = CuckooTable()
    i1, _, _ = table.candidate_buckets(b"x")
    out = table.insert(b"x")
    assert out.placed_at == i1 and not out.grew


def test_counts():
    table = CuckooTable()
    assert table.count(b"s") == 0
    table.insert(b"s")
    assert table.count(b"s") == 1
    for _ in range(2):
        table.insert(b"s")
    for _ in range(2):
        table.insert(b"t")
    assert (table.count(b"s"), table.count(b"t")) == (3, 2)
    assert table.load == 2 and table.total_count() == 5


def test_count_probes_two_buckets():
    table = CuckooTable(n_buckets=8)
    for i in range(200):
        table.insert(i.to_bytes(2, "big"))
    before = table.probes
    table.count(b"anything")
    assert table.probes - before == 2


def test_growth_with_colliding_keys():
    table = CuckooTable(n_buckets=4, bucket_size=1, fingerprint_bits=16, max_kicks=20, seed=5)
    inserted = [f"seg{i}".encode() for i in range(9)]
    outcomes = [table.insert(k) for k in inserted]
    assert any(o.grew for o in outcomes)
    assert table.growth_events == sum(o.grew for o in outcomes)
    assert table.bucket_size % table.default_bucket_size == 0
    for k in inserted:
        assert table.count(k) >= 1
    check_placement(table, inserted)


@pytest.mark.parametrize("trial", range(1000))
def test_randomized_placement_and_multiset(trial):
    rnd = random.Random(trial)
    table = CuckooTable(n_buckets=rnd.choice([1, 2, 4, 8, 16]), bucket_size=rnd.randint(1, 3),
                        fingerprint_bits=rnd.choice([4, 8, 16]), max_kicks=rnd.randint(0, 30), seed=trial)
    pool = [rnd.randbytes(rnd.randint(1, 6)) for _ in range(rnd.randint(1, 40))]
    inserted = [rnd.choice(pool) for _ in range(rnd.randint(1, 120))]
    sizes = []
    for key in inserted:
        table.insert(key)
        sizes.append(table.bucket_size)
    assert sizes == sorted(sizes)
    check_placement(table, inserted)
    oracle = fingerprint_oracle(table, inserted)
    for key in set(inserted):
        i1, i2, f = table.candidate_buckets(key)
        assert table.count(key) == oracle[(frozenset((i1, i2)), f)]
    assert table.total_count() == len(inserted)


def test_snapshot_round_trip():
    table = CuckooTable(n_buckets=8, bucket_size=1, max_kicks=5, seed=9)
    for i in range(60):
        table.insert(i.to_bytes(2, "big"))
    clone = CuckooTable.from_bytes(table.to_bytes())
    assert clone.to_bytes() == table.to_bytes()
    assert clone.buckets == table.buckets
    assert clone.bucket_size == table.bucket_size and clone.growth_events == table.growth_events
    with pytest.raises(InvalidInput):
        CuckooTable.from_bytes(table.to_bytes()[:-3])
    with pytest.raises(InvalidInput):
        CuckooTable.from_bytes(b"XXXX" + table.to_bytes()[4:])


def test_fpr_cuckoo():
    assert fpr_cuckoo(2, 1) == 0.5
    assert fpr_cuckoo(1000, 8) == pytest.approx(7.8125e-6)
    assert fpr_cuckoo(10, 60) < 1e-18
    with pytest.raises(InvalidInput):
        fpr_cuckoo(0, 16)


def test_bits_per_item():
    assert bits_per_item(0.25, 1.0) == 4.0
    assert bits_per_item(0.002, 0.95) == pytest.approx((math.log2(500) + 2) / 0.95)
    assert bits_per_item(0.002, 0.95) == pytest.approx(11.54, abs=0.01)
    assert bits_per_item(0.01, 0.4) == pytest.approx(2 * bits_per_item(0.01, 0.8))
    with pytest.raises(InvalidInput):
        bits_per_item(1.0, 0.5)


def test_measured_fpr_bounded_after_volume():
    rnd = random.Random(77)
    table = CuckooTable(n_buckets=1024, seed=1)
    for i in range(100_000):
        table.insert(b"in" + i.to_bytes(4, "big"))
    hits = sum(table.count(b"out" + rnd.randbytes(6)) > 0 for _ in range(10_000))
    assert hits / 10_000 <= 0.01
