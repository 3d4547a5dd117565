"""Local differential privacy by artificial Bloom filters.

Each client turns its item's bucket index into a one-hot vector over B
buckets, applies randomized response, and reports one Bloom filter per
bucket left "on": a similar filter for the real bucket, a filter drawn from
a pre-computed per-bucket dictionary for every other one.

All quantities involving 2^l and e^epsilon are handled in log space.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .cuckoo import candidate_pair
from .encoding import BloomFilter, generate_similar_bf, nbytes, parse_kv
from .errors import CorruptDictionary, DictionaryBuildFailure, InvalidInput

LN2 = math.log(2.0)
ADJACENCY_MODES = ("presence", "substitution")
ROUTING_FP_BITS = 16
DEFAULT_ROUTING_SEED = 0xB0C4E7
MAX_DRAWS_PER_BUCKET = 10**7


@dataclass(frozen=True)
class MechanismParams:
    """Privacy parameters: budget, filter length, bucket count, threshold, segments.

    ``adjacency`` selects which flip probability governs perturbation:
    "presence" (item present vs absent) or "substitution" (one item replaced
    by another, the stricter square-root bound).
    """
    epsilon: float = 6.0
    l: int = 30
    B: int = 10000
    s_t: float = 0.8
    m: int = 5
    adjacency: str = "presence"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if not 0 < self.s_t <= 1:
            raise InvalidInput(f"s_t must be in (0, 1], got {self.s_t}")
        if self.l < 1 or self.B < 1 or not 1 <= self.m <= self.l:
            raise InvalidInput("need l >= 1, B >= 1 and 1 <= m <= l")
        if self.adjacency not in ADJACENCY_MODES:
            raise InvalidInput(f"adjacency must be one of {ADJACENCY_MODES}")

    @property
    def log_t(self) -> float:
        """log of t = 2^l / B, the patterns per bucket."""
        return self.l * LN2 - math.log(self.B)

    @property
    def log_s(self) -> float:
        """log of s = 2^(l(1 - s_t)) * B / 2^l."""
        return self.l * (1 - self.s_t) * LN2 - self.log_t

    @property
    def s(self) -> float:
        return math.exp(self.log_s)

    @property
    def t(self) -> float:
        return math.exp(self.log_t)

    @property
    def p_flip(self) -> float:
        if self.adjacency == "substitution":
            return flip_probability_pairwise(self)
        return flip_probability(self)

    def to_mapping(self) -> dict:
        return {"epsilon": float(self.epsilon), "l": self.l, "B": self.B, "s_t": float(self.s_t),
                "m": self.m, "adjacency": self.adjacency}

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" if not isinstance(v, str) else f'{k} = "{v}"\n'
                       for k, v in self.to_mapping().items())

    @classmethod
    def from_mapping(cls, kv) -> "MechanismParams":
        kv = dict(kv)
        unknown = set(kv) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown mechanism keys: {sorted(unknown)}")
        casts = {"epsilon": float, "l": int, "B": int, "s_t": float, "m": int,
                 "adjacency": lambda v: str(v).strip('"')}
        return cls(**{k: casts[k](v) for k, v in kv.items()})

    @classmethod
    def from_text(cls, text: str) -> "MechanismParams":
        return cls.from_mapping(parse_kv(text))


def _logistic_neg(x: float) -> float:
    """1 / (1 + e^x) without overflow."""
    if x >= 0:
        z = math.exp(-x)
        return z / (1 + z)
    return 1 / (1 + math.exp(x))


def flip_probability(params: MechanismParams) -> float:
    """1 / (1 + s e^eps): flip probability calibrated for present/absent adjacency."""
    return _logistic_neg(params.log_s + params.epsilon)


def flip_probability_pairwise(params: MechanismParams) -> float:
    """1 / (1 + sqrt(s e^eps)): bound for substituting one item by another."""
    return _logistic_neg(0.5 * (params.log_s + params.epsilon))


class RatioCheck(NamedTuple):
    p11: float
    p01: float
    ratio: float
    log_ratio: float
    holds: bool


def ratio_bound_check(params: MechanismParams, p: float | None = None) -> RatioCheck:
    """Evaluate P11 / P01 for flip probability ``p`` and test e^-eps <= ratio <= e^eps.

    P11 = (1 - p) / 2^(l(1-s_t)),  P01 = p / t + (1 - p) / 2^l, kept in full.
    """
    if p is None:
        p = params.p_flip
    if not 0 < p < 1:
        raise InvalidInput("flip probability must be in (0, 1)")
    l, eps = params.l, params.epsilon
    log_p11 = math.log1p(-p) - l * (1 - params.s_t) * LN2
    log_p01 = np.logaddexp(math.log(p) - params.log_t, math.log1p(-p) - l * LN2)
    log_ratio = float(log_p11 - log_p01)
    tol = 1e-9 * max(1.0, eps)
    return RatioCheck(math.exp(log_p11), math.exp(log_p01),
                      math.exp(log_ratio) if log_ratio < 700 else math.inf,
                      log_ratio, -eps - tol <= log_ratio <= eps + tol)


def count_lower_bound(c: float, params: MechanismParams) -> float:
    """c - c * max(p, s e^eps (1 - s_t)^m / (1 + s e^eps)), exponent = segment count m."""
    if c < 0:
        raise InvalidInput("count must be non-negative")
    p = flip_probability(params)
    missed = (1 - p) * (1 - params.s_t) ** params.m
    return c - c * max(p, missed)


def count_upper_bound(c: float, n: float, params: MechanismParams) -> float:
    """c + n (B - 1) 2^(l(1-s_t)) / ((1 + s e^eps) 2^l)."""
    if c < 0 or n < 0:
        raise InvalidInput("counts must be non-negative")
    log_term = (params.l * (1 - params.s_t) - params.l) * LN2
    return c + n * (params.B - 1) * flip_probability(params) * math.exp(log_term)


def expected_report_segments(params: MechanismParams) -> float:
    """Communication cost m * B * p_flip in segments per reported item."""
    return params.m * params.B * params.p_flip


def bucket_pair(bf: BloomFilter, n_buckets: int, seed: int = DEFAULT_ROUTING_SEED) -> tuple[int, int]:
    i1, i2, _ = candidate_pair(bf.to_bytes(), n_buckets, ROUTING_FP_BITS, seed)
    return i1, i2


@dataclass(frozen=True)
class BucketDictionary:
    """Per-bucket lists of l-bit patterns routed (via i1 or i2) to that bucket."""
    l: int
    B: int
    t_cap: int
    seed: int
    buckets: tuple[tuple[int, ...], ...] = field(repr=False)
    routing_seed: int = DEFAULT_ROUTING_SEED

    def filters(self, idx: int) -> tuple[int, ...]:
        return self.buckets[idx]

    def is_member(self, bf: BloomFilter, idx: int) -> bool:
        return idx in bucket_pair(bf, self.B, self.routing_seed)

    def matches(self, params: MechanismParams) -> bool:
        return self.l == params.l and self.B == params.B

    _HEADER = struct.Struct("<4sBHIIQQ")
    MAGIC = b"PPFD"

    def to_bytes(self) -> bytes:
        parts = [self._HEADER.pack(self.MAGIC, 1, self.l, self.B, self.t_cap, self.seed, self.routing_seed)]
        for bucket in self.buckets:
            parts.append(struct.pack("<I", len(bucket)))
            parts.extend(BloomFilter(bits, self.l).to_bytes() for bits in bucket)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BucketDictionary":
        try:
            magic, version, l, B, t_cap, seed, routing_seed = cls._HEADER.unpack_from(data, 0)
        except struct.error as exc:
            raise CorruptDictionary("truncated dictionary header") from exc
        if magic != cls.MAGIC or version != 1:
            raise CorruptDictionary("not a bucket dictionary file")
        width = nbytes(l)
        offset = cls._HEADER.size
        buckets = []
        try:
            for _ in range(B):
                (n,) = struct.unpack_from("<I", data, offset)
                offset += 4
                chunk = data[offset:offset + n * width]
                if len(chunk) != n * width:
                    raise CorruptDictionary("truncated dictionary body")
                buckets.append(tuple(BloomFilter.from_bytes(chunk[i:i + width], l).bits
                                     for i in range(0, len(chunk), width)))
                offset += n * width
        except struct.error as exc:
            raise CorruptDictionary("truncated dictionary body") from exc
        if offset != len(data):
            raise CorruptDictionary("trailing bytes in dictionary file")
        return cls(l, B, t_cap, seed, tuple(buckets), routing_seed)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "BucketDictionary":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _random_patterns(rng: np.random.Generator, l: int, n: int) -> list[int]:
    if l <= 63:
        return rng.integers(0, 1 << l, size=n, dtype=np.int64).tolist()
    words = rng.integers(0, 1 << 32, size=(n, (l + 31) // 32), dtype=np.uint64)
    out = []
    for row in words.tolist():
        v = 0
        for w in row:
            v = (v << 32) | w
        out.append(v >> (len(row) * 32 - l))
    return out


def build_dictionary(params: MechanismParams, t_cap: int | None = 64, seed: int = 0,
                     exhaustive: bool = False, routing_seed: int = DEFAULT_ROUTING_SEED) -> BucketDictionary:
    """Pre-compute artificial filters for every bucket.

    Exhaustive mode enumerates all 2^l patterns (l <= 20) with no cap.
    Otherwise random patterns are routed until each bucket holds ``t_cap``
    of them or the sampling budget is spent; any bucket still empty is then
    filled by rejection sampling aimed at that bucket.
    """
    l, B = params.l, params.B
    lists: list[list[int]] = [[] for _ in range(B)]
    if exhaustive:
        if l > 20:
            raise InvalidInput("exhaustive dictionary is limited to l <= 20")
        for bits in range(1 << l):
            i1, i2 = bucket_pair(BloomFilter(bits, l), B, routing_seed)
            lists[i1].append(bits)
            if i2 != i1:
                lists[i2].append(bits)
        return BucketDictionary(l, B, 0, seed, tuple(tuple(b) for b in lists), routing_seed)

    if t_cap is None or t_cap < 1:
        raise InvalidInput("t_cap must be >= 1")
    rng = np.random.default_rng(seed)
    budget = 4 * B * t_cap
    remaining = B
    drawn = 0
    while remaining and drawn < budget:
        batch = min(max(4096, B), budget - drawn)
        for bits in _random_patterns(rng, l, batch):
            i1, i2 = bucket_pair(BloomFilter(bits, l), B, routing_seed)
            for idx in (i1, i2) if i2 != i1 else (i1,):
                bucket = lists[idx]
                if len(bucket) < t_cap:
                    bucket.append(bits)
                    if len(bucket) == t_cap:
                        remaining -= 1
        drawn += batch

    for idx, bucket in enumerate(lists):
        draws = 0
        while not bucket:
            for bits in _random_patterns(rng, l, 4096):
                if idx in bucket_pair(BloomFilter(bits, l), B, routing_seed):
                    bucket.append(bits)
                    break
            draws += 4096
            if not bucket and draws >= MAX_DRAWS_PER_BUCKET:
                raise DictionaryBuildFailure(f"no pattern found for bucket {idx} in {draws} draws")
    return BucketDictionary(l, B, t_cap, seed, tuple(tuple(b) for b in lists), routing_seed)


@dataclass(frozen=True)
class PerturbedReport:
    filters: tuple[BloomFilter, ...]
    true_index_included: bool = field(default=False, repr=False, compare=False)
    # bucket index behind each filter, same order; for analysis only, never sent
    bucket_indices: tuple[int, ...] = field(default=(), repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.filters)


def perturb(x_bf: BloomFilter, params: MechanismParams, dictionary: BucketDictionary,
            rng: np.random.Generator, p_flip: float | None = None) -> PerturbedReport:
    """Randomized response over bucket indices with artificial filters as noise.

    ``p_flip`` overrides the calibrated flip probability (used by tests and
    noiseless baselines).
    """
    if x_bf.length != params.l:
        raise InvalidInput(f"filter length {x_bf.length} != l={params.l}")
    if not dictionary.matches(params):
        raise CorruptDictionary("dictionary was built for different (l, B)")
    p = params.p_flip if p_flip is None else p_flip
    B = params.B
    i1, _ = bucket_pair(x_bf, B, dictionary.routing_seed)
    flipped = rng.random(B) < p
    real_on = not flipped[i1]
    flipped[i1] = False

    filters = []
    on = np.flatnonzero(flipped).tolist()
    for idx in on:
        choices = dictionary.buckets[idx]
        if not choices:
            raise CorruptDictionary(f"dictionary bucket {idx} is empty")
        filters.append(BloomFilter(choices[int(rng.integers(len(choices)))], params.l))
    if real_on:
        filters.append(generate_similar_bf(x_bf, params.s_t, rng))
        on.append(i1)
    if len(filters) > 1:
        order = rng.permutation(len(filters))
        filters = [filters[i] for i in order]
        on = [on[i] for i in order]
    return PerturbedReport(tuple(filters), real_on, tuple(on))
