"""Distance-preserving Bloom filter encoding of strings and numbers.

Bit index 0 is the most significant bit of the underlying integer, so the
integer value of a filter reads the same as its bit string left to right.
"""
from __future__ import annotations

import math
import numbers
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInput, InvalidInput
from .hashing import double_hash_positions

CONFIG_VERSION = 1


@dataclass(frozen=True, slots=True)
class BloomFilter:
    bits: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise InvalidInput("filter length must be positive")
        if self.bits < 0 or self.bits >> self.length:
            raise InvalidInput("bits do not fit in filter length")

    @classmethod
    def from_string(cls, s: str) -> "BloomFilter":
        s = s.strip()
        if not s or set(s) - {"0", "1"}:
            raise InvalidInput(f"not a bit string: {s!r}")
        return cls(int(s, 2), len(s))

    @classmethod
    def from_indices(cls, indices, length: int) -> "BloomFilter":
        bits = 0
        for i in indices:
            bits |= 1 << (length - 1 - i)
        return cls(bits, length)

    @classmethod
    def from_bytes(cls, data: bytes, length: int) -> "BloomFilter":
        if len(data) != nbytes(length):
            raise InvalidInput(f"expected {nbytes(length)} bytes for {length} bits, got {len(data)}")
        pad = nbytes(length) * 8 - length
        value = int.from_bytes(data, "big")
        if value & ((1 << pad) - 1):
            raise InvalidInput("non-zero padding bits")
        return cls(value >> pad, length)

    def to_bytes(self) -> bytes:
        """Big-endian, index 0 first, zero padded to a whole number of bytes."""
        pad = nbytes(self.length) * 8 - self.length
        return (self.bits << pad).to_bytes(nbytes(self.length), "big")

    def __str__(self) -> str:
        return format(self.bits, f"0{self.length}b")

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(i)
        return (self.bits >> (self.length - 1 - i)) & 1

    def popcount(self) -> int:
        return self.bits.bit_count()

    def indices(self) -> list[int]:
        return [i for i in range(self.length) if self[i]]


def nbytes(length: int) -> int:
    return (length + 7) // 8


def _check_same_length(a: BloomFilter, b: BloomFilter) -> None:
    if a.length != b.length:
        raise InvalidInput(f"length mismatch: {a.length} != {b.length}")


def hamming(a: BloomFilter, b: BloomFilter) -> int:
    _check_same_length(a, b)
    return (a.bits ^ b.bits).bit_count()


def dice(a: BloomFilter, b: BloomFilter) -> float:
    """Dice coefficient 2|a & b| / (|a| + |b|) of two equal-length filters."""
    _check_same_length(a, b)
    total = a.bits.bit_count() + b.bits.bit_count()
    if total == 0:
        raise DegenerateInput("Dice similarity of two all-zero filters is undefined")
    return 2 * (a.bits & b.bits).bit_count() / total


@dataclass(frozen=True)
class EncoderConfig:
    l: int = 30
    k: int = 2
    q: int = 2
    radius: int = 10
    step: float = 1.0
    seed: int = 0x5EED

    def __post_init__(self):
        if self.k < 1 or self.l < self.k or self.q < 1:
            raise InvalidInput(f"need k >= 1, l >= k, q >= 1 (got l={self.l}, k={self.k}, q={self.q})")
        if self.radius < 0 or not self.step > 0:
            raise InvalidInput("radius must be >= 0 and step > 0")

    def to_text(self) -> str:
        lines = [f"version = {CONFIG_VERSION}"]
        lines += [f"{key} = {getattr(self, key)!r}" for key in ("l", "k", "q", "radius", "step", "seed")]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EncoderConfig":
        kv = parse_kv(text)
        version = int(kv.pop("version", CONFIG_VERSION))
        if version != CONFIG_VERSION:
            raise InvalidInput(f"unsupported encoder config version {version}")
        return cls.from_mapping(kv)

    @classmethod
    def from_mapping(cls, kv) -> "EncoderConfig":
        kv = dict(kv)
        kv.pop("version", None)
        unknown = set(kv) - {"l", "k", "q", "radius", "step", "seed"}
        if unknown:
            raise InvalidInput(f"unknown encoder keys: {sorted(unknown)}")
        casts = {"l": int, "k": int, "q": int, "radius": int, "step": float, "seed": int}
        return cls(**{key: casts[key](v) for key, v in kv.items()})


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"bad config line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def normalize(value: str) -> str:
    return value.strip().lower()


def qgrams(text: str, q: int) -> list[str]:
    """q-grams of ``text``; strings shorter than q yield themselves as one gram."""
    if len(text) < q:
        return [text] if text else []
    return [text[i:i + q] for i in range(len(text) - q + 1)]


def qgram_dice(a: str, b: str, q: int = 2) -> float:
    """Dice similarity of the q-gram sets of two (normalized) strings."""
    ga, gb = set(qgrams(normalize(a), q)), set(qgrams(normalize(b), q))
    if not ga and not gb:
        return 1.0
    return 2 * len(ga & gb) / (len(ga) + len(gb))


def _encode_tokens(tokens, cfg: EncoderConfig) -> BloomFilter:
    bits = 0
    top = cfg.l - 1
    for token in tokens:
        for pos in double_hash_positions(token, cfg.k, cfg.l, cfg.seed):
            bits |= 1 << (top - pos)
    return BloomFilter(bits, cfg.l)


def encode_string(value: str, cfg: EncoderConfig) -> BloomFilter:
    text = normalize(value)
    if not text:
        raise InvalidInput("cannot encode an empty string")
    return _encode_tokens((b"s:" + g.encode("utf-8") for g in qgrams(text, cfg.q)), cfg)


def _numeric_token(x: float) -> bytes:
    return b"n:" + format(round(x, 9) + 0.0, ".12g").encode()


def encode_numeric(value, cfg: EncoderConfig) -> BloomFilter:
    """Encode ``value`` together with its neighbours ``value + i*step``, |i| <= radius."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise InvalidInput(f"not a number: {value!r}")
    x = float(value)
    if not math.isfinite(x):
        raise InvalidInput(f"non-finite value: {value!r}")
    r = cfg.radius
    return _encode_tokens((_numeric_token(x + i * cfg.step) for i in range(-r, r + 1)), cfg)


def encode(value, cfg: EncoderConfig) -> BloomFilter:
    if isinstance(value, str):
        return encode_string(value, cfg)
    return encode_numeric(value, cfg)


def segment_sizes(l: int, m: int) -> list[int]:
    if not 1 <= m <= l:
        raise InvalidInput(f"segment count must satisfy 1 <= m <= l (m={m}, l={l})")
    base, extra = divmod(l, m)
    return [base + 1 if j < extra else base for j in range(m)]


def segment(bf: BloomFilter, m: int) -> tuple[BloomFilter, ...]:
    """Split into m contiguous, order-preserving pieces; the first l mod m get one extra bit."""
    out = []
    remaining = bf.length
    for size in segment_sizes(bf.length, m):
        remaining -= size
        out.append(BloomFilter((bf.bits >> remaining) & ((1 << size) - 1), size))
    return tuple(out)


def concat(segments: Sequence[BloomFilter]) -> BloomFilter:
    bits = length = 0
    for seg in segments:
        bits = (bits << seg.length) | seg.bits
        length += seg.length
    return BloomFilter(bits, length)


def flip_count(l: int, s_c: float) -> int:
    # guard against 20 * (1 - 0.7) == 6.000000000000001
    return math.ceil(round(l * (1.0 - s_c), 9))


def generate_similar_bf(bf: BloomFilter, s_t: float, rng: np.random.Generator) -> BloomFilter:
    """Random filter at Hamming distance ceil(l*(1 - s_c)) from ``bf``, s_c ~ U[s_t, 1]."""
    if not 0 < s_t <= 1:
        raise InvalidInput(f"similarity threshold must be in (0, 1], got {s_t}")
    if s_t == 1.0:
        return bf
    s_c = rng.uniform(s_t, 1.0)
    n = flip_count(bf.length, s_c)
    if n == 0:
        return bf
    mask = 0
    for pos in rng.choice(bf.length, size=n, replace=False):
        mask |= 1 << int(pos)
    return BloomFilter(bf.bits ^ mask, bf.length)


def fpr_bloom(k: int, n: int, l: int) -> float:
    """Closed-form Bloom filter false-positive rate (1 - exp(-kn/l))^k."""
    return (-math.expm1(-k * n / l)) ** k
