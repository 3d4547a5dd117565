"""Adaptive counting cuckoo filter.

Buckets map fingerprint -> counter. When an insertion still fails after
``max_kicks`` relocations, every bucket's capacity grows by the default
bucket size instead of the insert failing.
"""
from __future__ import annotations

import math
import random
import struct
from dataclasses import dataclass
from typing import NamedTuple

from .errors import InvalidInput
from .hashing import MASK64, hash_pair, int_hash

SNAPSHOT_MAGIC = b"PPCT"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sBIIIBQI")  # magic, version, B, bucket_size, default size, F, seed, max_kicks


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def fingerprint_index_hash(f: int, seed: int) -> int:
    return int_hash(f, seed ^ 0xF1F1F1F1)


def candidate_pair(data: bytes, n_buckets: int, fp_bits: int, seed: int) -> tuple[int, int, int]:
    """(i1, i2, f) for ``data`` over ``n_buckets`` buckets.

    i2 = i1 XOR (h(f) mod 2^ceil(log2 B)), reduced mod B. For a power-of-two B
    the reduction is a no-op and i1 is recovered from i2 by the same XOR.
    """
    h_index, h_fp = hash_pair(data, seed)
    f = h_fp & ((1 << fp_bits) - 1) or 1
    i1 = h_index % n_buckets
    i2 = (i1 ^ (fingerprint_index_hash(f, seed) & (next_pow2(n_buckets) - 1))) % n_buckets
    return i1, i2, f


class InsertOutcome(NamedTuple):
    placed_at: int
    grew: bool


@dataclass
class TableStats:
    n_buckets: int
    bucket_size: int
    load: int
    total_count: int
    occupied_buckets: int
    growth_events: int

    @property
    def load_factor(self) -> float:
        return self.load / (self.n_buckets * self.bucket_size)


class CuckooTable:
    """Counting cuckoo filter whose bucket capacity grows on insertion failure.

    ``n_buckets`` is rounded up to a power of two so the XOR partner of a
    bucket index stays inside the table.
    """

    def __init__(self, n_buckets: int = 1024, bucket_size: int = 4, fingerprint_bits: int = 16,
                 max_kicks: int = 500, seed: int = 0):
        if n_buckets < 1 or bucket_size < 1 or max_kicks < 0:
            raise InvalidInput("n_buckets and bucket_size must be >= 1, max_kicks >= 0")
        if not 1 <= fingerprint_bits <= 32:
            raise InvalidInput("fingerprint_bits must be in [1, 32]")
        self.n_buckets = next_pow2(n_buckets)
        self.default_bucket_size = bucket_size
        self.bucket_size = bucket_size
        self.fingerprint_bits = fingerprint_bits
        self.max_kicks = max_kicks
        self.seed = seed & MASK64
        self.buckets: list[dict[int, int]] = [{} for _ in range(self.n_buckets)]
        self.load = 0
        self.growth_events = 0
        self.probes = 0
        self._mask = self.n_buckets - 1
        self._rng = random.Random(self.seed)

    def candidate_buckets(self, data: bytes) -> tuple[int, int, int]:
        return candidate_pair(data, self.n_buckets, self.fingerprint_bits, self.seed)

    def alt_index(self, i: int, f: int) -> int:
        return i ^ (fingerprint_index_hash(f, self.seed) & self._mask)

    def insert(self, data: bytes) -> InsertOutcome:
        i1, i2, f = self.candidate_buckets(data)
        return self.insert_fingerprint(i1, i2, f)

    def insert_fingerprint(self, i1: int, i2: int, f: int) -> InsertOutcome:
        buckets = self.buckets
        b1, b2 = buckets[i1], buckets[i2]
        if f in b1:
            b1[f] += 1
            return InsertOutcome(i1, False)
        if f in b2:
            b2[f] += 1
            return InsertOutcome(i2, False)
        self.load += 1
        if len(b1) < self.bucket_size:
            b1[f] = 1
            return InsertOutcome(i1, False)
        if len(b2) < self.bucket_size:
            b2[f] = 1
            return InsertOutcome(i2, False)

        rng = self._rng
        i = i1 if rng.random() < 0.5 else i2
        cur_f, cur_c = f, 1
        for _ in range(self.max_kicks):
            bucket = buckets[i]
            victim = list(bucket)[rng.randrange(len(bucket))]
            victim_c = bucket.pop(victim)
            bucket[cur_f] = cur_c
            cur_f, cur_c = victim, victim_c
            i = self.alt_index(i, cur_f)
            bucket = buckets[i]
            if cur_f in bucket:
                # same fingerprint already lives in the victim's other bucket
                bucket[cur_f] += cur_c
                self.load -= 1
                return InsertOutcome(i, False)
            if len(bucket) < self.bucket_size:
                bucket[cur_f] = cur_c
                return InsertOutcome(i, False)

        # the fingerprint in hand belongs in bucket i, which is one of its two candidates
        self.bucket_size += self.default_bucket_size
        self.growth_events += 1
        buckets[i][cur_f] = cur_c
        return InsertOutcome(i, True)

    def count(self, data: bytes) -> int:
        i1, i2, f = self.candidate_buckets(data)
        return self.count_fingerprint(i1, i2, f)

    def count_fingerprint(self, i1: int, i2: int, f: int) -> int:
        self.probes += 2
        c = self.buckets[i1].get(f, 0)
        if i2 != i1:
            c += self.buckets[i2].get(f, 0)
        return c

    def occupied_buckets(self) -> int:
        return sum(1 for b in self.buckets if b)

    def total_count(self) -> int:
        return sum(sum(b.values()) for b in self.buckets)

    def stats(self) -> TableStats:
        return TableStats(self.n_buckets, self.bucket_size, self.load, self.total_count(),
                          self.occupied_buckets(), self.growth_events)

    def __len__(self) -> int:
        return self.load

    def to_bytes(self) -> bytes:
        parts = [_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.n_buckets, self.bucket_size,
                              self.default_bucket_size, self.fingerprint_bits, self.seed, self.max_kicks),
                 struct.pack("<I", self.growth_events)]
        for bucket in self.buckets:
            parts.append(struct.pack("<I", len(bucket)))
            for f, c in bucket.items():
                parts.append(struct.pack("<IQ", f, c))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CuckooTable":
        try:
            magic, version, n_buckets, bucket_size, default_size, fp_bits, seed, max_kicks = \
                _HEADER.unpack_from(data, 0)
        except struct.error as exc:
            raise InvalidInput("truncated cuckoo snapshot") from exc
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise InvalidInput("not a cuckoo table snapshot")
        table = cls(n_buckets, default_size, fp_bits, max_kicks, seed)
        if table.n_buckets != n_buckets:
            raise InvalidInput("bucket count is not a power of two")
        table.bucket_size = bucket_size
        offset = _HEADER.size
        try:
            (table.growth_events,) = struct.unpack_from("<I", data, offset)
            offset += 4
            for bucket in table.buckets:
                (n,) = struct.unpack_from("<I", data, offset)
                offset += 4
                for _ in range(n):
                    f, c = struct.unpack_from("<IQ", data, offset)
                    offset += 12
                    bucket[f] = c
        except struct.error as exc:
            raise InvalidInput("truncated cuckoo snapshot") from exc
        if offset != len(data):
            raise InvalidInput("trailing bytes after cuckoo snapshot")
        table.load = sum(len(b) for b in table.buckets)
        return table


def fpr_cuckoo(occupied: int, fingerprint_bits: int) -> float:
    """False-positive rate 2/O * 1/2^F as stated for the adaptive filter."""
    if occupied <= 0:
        raise InvalidInput("occupied bucket count must be >= 1")
    return 2.0 / occupied * 2.0 ** -fingerprint_bits


def bits_per_item(target_fpr: float, load_factor: float) -> float:
    """Space per stored item, (log2(1/fpr) + 2) / alpha."""
    if not 0 < target_fpr < 1 or not 0 < load_factor <= 1:
        raise InvalidInput("need 0 < fpr < 1 and 0 < load factor <= 1")
    return (math.log2(1 / target_fpr) + 2) / load_factor
