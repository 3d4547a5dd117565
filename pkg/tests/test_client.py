import dataclasses
import itertools
import struct
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ppcf.client import (ClientState, SegmentRecord, WireReport, canonical_key, decode_varint, encode_varint,
                         shuffle_segments)
from ppcf.encoding import BloomFilter, EncoderConfig, concat, encode, segment
from ppcf.errors import AlreadyReported, InvalidInput, MalformedReport
from ppcf.ldp import MechanismParams, build_dictionary, perturb

ENC = EncoderConfig(l=30)


@pytest.fixture(scope="module")
def noisy():
    mech = MechanismParams(epsilon=8, l=30, B=64, s_t=0.8, m=5)
    return mech, build_dictionary(mech, t_cap=8, seed=0)


def test_submit_twice_rejected(noisy, rng):
    mech, d = noisy
    client = ClientState(1, ENC, mech, d)
    client.submit("Peter", rng)
    with pytest.raises(AlreadyReported):
        client.submit("  peter ", rng)
    client.submit("pete", rng)
    assert client.reported == {"s:peter", "s:pete"}


def test_numeric_and_text_keys_differ():
    assert canonical_key(5) == canonical_key(5.0) != canonical_key("5")
    with pytest.raises(InvalidInput):
        canonical_key(None)


def test_report_has_m_records_per_filter(noisy):
    mech, d = noisy
    rng = np.random.default_rng(0)
    client = ClientState(2, ENC, mech, d)
    for i in range(20):
        report = client.submit(f"word{i}", rng, p_flip=0.2)
        per_index = Counter(j for j, _ in report.records)
        assert set(per_index) == set(range(mech.m))
        assert len(set(per_index.values())) == 1
        assert len(report) == per_index[0] * mech.m


def test_noiseless_report_reassembles(noisy, rng):
    _, d = noisy
    mech = MechanismParams(epsilon=8, l=30, B=64, s_t=1.0, m=5)
    report = ClientState(3, ENC, mech, d).submit("peter", rng, p_flip=0.0)
    parts = sorted(report.records, key=lambda r: r.index)
    assert [r.index for r in parts] == list(range(5))
    assert concat([r.segment for r in parts]) == encode("peter", ENC)


def test_mismatched_lengths_rejected(noisy):
    mech, d = noisy
    with pytest.raises(InvalidInput):
        ClientState(1, EncoderConfig(l=31), mech, d)


@given(st.lists(st.sampled_from(["ann", "bob", "Bob", "cy", "dee ", "eve", 3, 3.0, 4]), max_size=30))
def test_one_report_per_distinct_value(values):
    mech = MechanismParams(epsilon=8, l=30, B=8, s_t=1.0, m=3)
    d = build_dictionary(mech, t_cap=1, seed=0)
    client = ClientState(9, ENC, mech, d)
    rng = np.random.default_rng(0)
    emitted = 0
    for v in values:
        try:
            client.submit(v, rng, p_flip=0.0)
            emitted += 1
        except AlreadyReported:
            pass
    assert emitted == len({canonical_key(v) for v in values})


def test_shuffle_preserves_multiset_and_is_seeded():
    recs = [SegmentRecord(j, BloomFilter(j + 1, 4)) for j in range(6)]
    a = shuffle_segments(recs, np.random.default_rng(5))
    b = shuffle_segments(recs, np.random.default_rng(5))
    assert a == b
    assert Counter(a) == Counter(recs)


def test_shuffle_uniform_over_orders():
    recs = [SegmentRecord(j, BloomFilter(1, 2)) for j in range(4)]
    rng = np.random.default_rng(17)
    n = 10_000
    seen = Counter(tuple(r.index for r in shuffle_segments(recs, rng)) for _ in range(n))
    assert set(seen) == set(itertools.permutations(range(4)))
    p = 1 / 24
    sigma = (n * p * (1 - p)) ** 0.5
    for count in seen.values():
        assert abs(count - n * p) <= 4 * sigma


def test_wire_layout():
    report = WireReport(0x0102030405060708, (SegmentRecord(2, BloomFilter.from_string("101")),))
    raw = report.to_bytes()
    assert raw == bytes([1]) + bytes.fromhex("0102030405060708") + bytes([1]) + bytes([2, 0, 3]) + bytes([0b10100000])
    assert WireReport.from_bytes(raw) == report


def test_varint():
    assert encode_varint(0) == b"\x00"
    assert encode_varint(300) == b"\xac\x02"
    assert decode_varint(b"\xac\x02", 0) == (300, 2)


@given(st.integers(0, 2**63))
def test_varint_round_trip(n):
    raw = encode_varint(n)
    assert decode_varint(raw, 0) == (n, len(raw))


@given(st.integers(0, 2**64 - 1), st.lists(st.tuples(st.integers(0, 255), st.integers(1, 300)).flatmap(
    lambda t: st.integers(0, (1 << t[1]) - 1).map(lambda b: SegmentRecord(t[0], BloomFilter(b, t[1])))),
    max_size=20))
def test_wire_round_trips(client_id, records):
    report = WireReport(client_id, tuple(records))
    assert WireReport.from_bytes(report.to_bytes()) == report
    assert WireReport.from_json(report.to_json()) == report
    assert WireReport.from_base64(report.to_base64()) == report


def test_malformed_reports():
    good = WireReport(7, (SegmentRecord(0, BloomFilter(5, 6)), SegmentRecord(1, BloomFilter(3, 6)))).to_bytes()
    cases = [good[:5], good[:-1], good + b"\x00", b"\x02" + good[1:],
             good[:9] + b"\x01" + struct.pack(">BH", 0, 0)]
    for raw in cases:
        with pytest.raises(MalformedReport):
            WireReport.from_bytes(raw)
    with pytest.raises(MalformedReport):
        WireReport.from_json("{}")
    with pytest.raises(MalformedReport):
        WireReport.from_base64("***")


def test_no_real_item_marker(noisy):
    """Serialized content depends only on the emitted filters, not on which one was real."""
    mech, d = noisy
    rng = np.random.default_rng(21)
    x = encode("peter", ENC)
    out = perturb(x, mech, d, rng, p_flip=0.3)
    relabeled = dataclasses.replace(out, true_index_included=not out.true_index_included,
                                    bucket_indices=tuple(reversed(out.bucket_indices)))

    def wire(report):
        recs = tuple(SegmentRecord(j, s) for f in report.filters for j, s in enumerate(segment(f, mech.m)))
        return WireReport(1, recs).to_bytes()

    assert wire(out) == wire(relabeled)
    fields = {f.name for f in dataclasses.fields(WireReport)}
    assert fields == {"client_id", "records", "version"}
