"""Comparison mechanisms: RAPPOR-style cohort Bloom filters and a private count-min sketch.

Both come with a per-report path (report -> bytes -> ingest) and a batch path
that draws the aggregated counters directly from their exact binomial law,
which is what makes desk-scale benchmarks with 10^5 reports affordable.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .client import canonical_key
from .errors import InvalidInput, MalformedReport
from .hashing import hash_pair

RAPPOR_SEED = 0x4A77
CMS_SEED = 0xC3C3


def value_key(value) -> bytes:
    return canonical_key(value).encode("utf-8")


def _positions(key: bytes, k: int, modulus: int, seed: int) -> np.ndarray:
    g1, g2 = hash_pair(key, seed)
    g1, g2 = g1 % modulus, g2 % modulus
    return (g1 + np.arange(k, dtype=np.int64) * g2) % modulus


# --- RAPPOR -----------------------------------------------------------------

@dataclass(frozen=True)
class RapporConfig:
    k: int = 2
    l: int = 1000
    cohorts: int = 32
    f: float = 0.5
    p: float = 0.5
    q: float = 0.75
    combine: str = "min"
    seed: int = RAPPOR_SEED

    def __post_init__(self):
        if not all(0.0 <= x <= 1.0 for x in (self.f, self.p, self.q)):
            raise InvalidInput("f, p, q must lie in [0, 1]")
        if self.combine not in ("min", "mean"):
            raise InvalidInput(f"unknown combiner {self.combine!r}")
        if self.cohorts < 1 or self.k < 1 or self.l < 1:
            raise InvalidInput("cohorts, k and l must be >= 1")
        if self.q_one == self.q_zero:
            raise InvalidInput("reports carry no signal when P(1|1) == P(1|0)")

    @property
    def q_one(self) -> float:
        """P(reported 1 | true bit 1)."""
        return self.f / 2 * (self.p + self.q) + (1 - self.f) * self.q

    @property
    def q_zero(self) -> float:
        """P(reported 1 | true bit 0)."""
        return self.f / 2 * (self.p + self.q) + (1 - self.f) * self.p


def rappor_positions(value, cohort: int, cfg: RapporConfig) -> np.ndarray:
    return _positions(value_key(value), cfg.k, cfg.l, cfg.seed + cohort)


def rappor_true_bits(value, cohort: int, cfg: RapporConfig) -> np.ndarray:
    bits = np.zeros(cfg.l, dtype=bool)
    bits[rappor_positions(value, cohort, cfg)] = True
    return bits


def rappor_report(value, cohort: int, cfg: RapporConfig, rng: np.random.Generator) -> np.ndarray:
    """Permanent randomized response with f, then instantaneous response with (p, q)."""
    if not 0 <= cohort < cfg.cohorts:
        raise InvalidInput(f"cohort {cohort} outside [0, {cfg.cohorts})")
    bits = rappor_true_bits(value, cohort, cfg)
    u = rng.random(cfg.l)
    permanent = np.where(u < cfg.f / 2, True, np.where(u < cfg.f, False, bits))
    return rng.random(cfg.l) < np.where(permanent, cfg.q, cfg.p)


class RapporAggregator:
    def __init__(self, cfg: RapporConfig):
        self.cfg = cfg
        self.counts = np.zeros((cfg.cohorts, cfg.l), dtype=np.int64)
        self.reports = np.zeros(cfg.cohorts, dtype=np.int64)

    def add(self, cohort: int, bits: np.ndarray) -> None:
        self.counts[cohort] += bits
        self.reports[cohort] += 1

    def add_batch(self, true_ones: np.ndarray, n_reports: np.ndarray, rng: np.random.Generator) -> None:
        """Aggregate per-cohort true bit counts as if each report were randomized."""
        cfg = self.cfg
        ones = rng.binomial(true_ones, cfg.q_one)
        ones += rng.binomial(n_reports[:, None] - true_ones, cfg.q_zero)
        self.counts += ones
        self.reports += n_reports

    def estimate(self, value, cohorts=None) -> float:
        return rappor_estimate(self, value, cohorts)

    def raw(self, value) -> float:
        """Raw counters summed per hash function across cohorts, smallest one."""
        totals = sum(self.counts[c, rappor_positions(value, c, self.cfg)] for c in range(self.cfg.cohorts))
        return float(np.min(totals))


def rappor_estimate(agg: RapporAggregator, value, cohorts=None) -> float:
    """De-bias each of the value's counters, sum per hash function across cohorts,
    then combine over hash functions by min (default) or mean, clamped at 0."""
    cfg = agg.cfg
    cohorts = range(cfg.cohorts) if cohorts is None else cohorts
    per_hash = np.zeros(cfg.k)
    for c in cohorts:
        if not 0 <= c < cfg.cohorts:
            raise InvalidInput(f"unknown cohort {c}")
        n = agg.reports[c]
        if n == 0:
            continue
        x = agg.counts[c, rappor_positions(value, c, cfg)]
        per_hash += (x - n * cfg.q_zero) / (cfg.q_one - cfg.q_zero)
    est = per_hash.min() if cfg.combine == "min" else per_hash.mean()
    return max(0.0, float(est))


# --- private count-min sketch -----------------------------------------------

WIDE_SKETCH_DEPTH = 20000  # high hash-count setting; use with batch ingest only


@dataclass(frozen=True)
class SketchConfig:
    epsilon: float = 8.0
    width: int = 1024
    depth: int = 16
    combine: str = "min"
    seed: int = CMS_SEED

    def __post_init__(self):
        if self.width < 2 or self.depth < 1:
            raise InvalidInput("width must be >= 2 and depth >= 1")
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.combine not in ("min", "mean"):
            raise InvalidInput(f"unknown combiner {self.combine!r}")

    @property
    def flip(self) -> float:
        return 1.0 / (math.exp(self.epsilon / 2) + 1.0)


def cms_columns(value, cfg: SketchConfig) -> np.ndarray:
    """Column of ``value`` in every row."""
    return _positions(value_key(value), cfg.depth, cfg.width, cfg.seed)


def cms_update(value, cfg: SketchConfig, rng: np.random.Generator) -> np.ndarray:
    """Privatized depth x width 0/1 matrix: one-hot rows with every bit flipped w.p. flip."""
    onehot = np.zeros((cfg.depth, cfg.width), dtype=bool)
    onehot[np.arange(cfg.depth), cms_columns(value, cfg)] = True
    return onehot ^ (rng.random((cfg.depth, cfg.width)) < cfg.flip)


class SketchAggregator:
    def __init__(self, cfg: SketchConfig):
        self.cfg = cfg
        self.counts = np.zeros((cfg.depth, cfg.width), dtype=np.int64)
        self.reports = 0

    def add(self, delta: np.ndarray) -> None:
        self.counts += delta
        self.reports += 1

    def add_batch(self, true_counts: np.ndarray, n_reports: int, rng: np.random.Generator) -> None:
        f = self.cfg.flip
        self.counts += rng.binomial(true_counts, 1 - f) + rng.binomial(n_reports - true_counts, f)
        self.reports += n_reports

    def estimate(self, value) -> float:
        return cms_estimate(self, value)

    def raw(self, value) -> float:
        cols = cms_columns(value, self.cfg)
        return float(self.counts[np.arange(self.cfg.depth), cols].min())


def cms_estimate(agg: SketchAggregator, value) -> float:
    """De-biased row counts combined by min (default) or mean, clamped at 0."""
    cfg = agg.cfg
    if agg.reports == 0:
        return 0.0
    x = agg.counts[np.arange(cfg.depth), cms_columns(value, cfg)]
    debiased = (x - agg.reports * cfg.flip) / (1 - 2 * cfg.flip)
    est = debiased.min() if cfg.combine == "min" else debiased.mean()
    return max(0.0, float(est))


def fpr_cms(width: int, depth: int, n: int) -> float:
    """Closed-form count-min false-positive rate [1 - (1 - 1/W)^n]^D."""
    return (-math.expm1(n * math.log1p(-1.0 / width))) ** depth


# --- experiment harness -----------------------------------------------------

def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


def _unpack_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n).astype(np.int64)


class RapporMethod:
    name = "rappor"

    def __init__(self, cfg: RapporConfig | None = None):
        self.cfg = cfg or RapporConfig()
        self.agg = RapporAggregator(self.cfg)

    def report(self, value, client_id: int, rng: np.random.Generator) -> bytes:
        cohort = client_id % self.cfg.cohorts
        return struct.pack(">H", cohort) + _pack_bits(rappor_report(value, cohort, self.cfg, rng))

    def ingest(self, data: bytes) -> None:
        width = (self.cfg.l + 7) // 8
        if len(data) != 2 + width:
            raise MalformedReport("RAPPOR report has the wrong size")
        (cohort,) = struct.unpack_from(">H", data, 0)
        if cohort >= self.cfg.cohorts:
            raise MalformedReport(f"unknown cohort {cohort}")
        self.agg.add(cohort, _unpack_bits(data[2:], self.cfg.l))

    def ingest_many(self, items, rng: np.random.Generator) -> None:
        """Batch ingest of (client_id, value) pairs."""
        cfg = self.cfg
        ones = np.zeros((cfg.cohorts, cfg.l), dtype=np.int64)
        n = np.zeros(cfg.cohorts, dtype=np.int64)
        for client_id, value in items:
            c = client_id % cfg.cohorts
            ones[c, np.unique(rappor_positions(value, c, cfg))] += 1
            n[c] += 1
        self.agg.add_batch(ones, n, rng)

    def estimate(self, value) -> float:
        return self.agg.estimate(value)

    def lookup(self, value) -> float:
        return self.agg.raw(value)


class SketchMethod:
    name = "cms"

    def __init__(self, cfg: SketchConfig | None = None):
        self.cfg = cfg or SketchConfig()
        self.agg = SketchAggregator(self.cfg)

    def report(self, value, client_id: int, rng: np.random.Generator) -> bytes:
        return _pack_bits(cms_update(value, self.cfg, rng).ravel())

    def ingest(self, data: bytes) -> None:
        cfg = self.cfg
        n = cfg.depth * cfg.width
        if len(data) != (n + 7) // 8:
            raise MalformedReport("sketch report has the wrong size")
        self.agg.add(_unpack_bits(data, n).reshape(cfg.depth, cfg.width))

    def ingest_many(self, items, rng: np.random.Generator) -> None:
        cfg = self.cfg
        true = np.zeros((cfg.depth, cfg.width), dtype=np.int64)
        rows = np.arange(cfg.depth)
        n = 0
        for _, value in items:
            np.add.at(true, (rows, cms_columns(value, cfg)), 1)
            n += 1
        self.agg.add_batch(true, n, rng)

    def estimate(self, value) -> float:
        return self.agg.estimate(value)

    def lookup(self, value) -> float:
        return self.agg.raw(value)
