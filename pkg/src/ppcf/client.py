"""Client pipeline: dedup -> encode -> perturb -> segment -> shuffle -> wire report."""
from __future__ import annotations

import base64
import json
import numbers
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .encoding import BloomFilter, EncoderConfig, encode, nbytes, normalize, segment
from .errors import AlreadyReported, InvalidInput, MalformedReport
from .ldp import BucketDictionary, MechanismParams, perturb

WIRE_VERSION = 1


class SegmentRecord(NamedTuple):
    index: int
    segment: BloomFilter


def encode_varint(n: int) -> bytes:
    if n < 0:
        raise InvalidInput("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, offset: int) -> tuple[int, int]:
    value = shift = 0
    while True:
        if offset >= len(data):
            raise MalformedReport("truncated varint")
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7
        if shift > 63:
            raise MalformedReport("varint too long")


@dataclass(frozen=True)
class WireReport:
    client_id: int
    records: tuple[SegmentRecord, ...]
    version: int = WIRE_VERSION

    def __len__(self) -> int:
        return len(self.records)

    def to_bytes(self) -> bytes:
        """version(1) | client_id(8, big-endian) | count(varint) | records.

        Each record is j(1) | bit length(2, big-endian) | payload.
        """
        parts = [struct.pack(">BQ", self.version, self.client_id), encode_varint(len(self.records))]
        for j, seg in self.records:
            parts.append(struct.pack(">BH", j, seg.length))
            parts.append(seg.to_bytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WireReport":
        if len(data) < 9:
            raise MalformedReport("report shorter than its header")
        version, client_id = struct.unpack_from(">BQ", data, 0)
        if version != WIRE_VERSION:
            raise MalformedReport(f"unsupported wire version {version}")
        n, offset = decode_varint(data, 9)
        records = []
        for _ in range(n):
            if offset + 3 > len(data):
                raise MalformedReport("truncated record header")
            j, length = struct.unpack_from(">BH", data, offset)
            offset += 3
            if length == 0:
                raise MalformedReport("zero-length segment")
            width = nbytes(length)
            payload = data[offset:offset + width]
            if len(payload) != width:
                raise MalformedReport("truncated segment payload")
            offset += width
            try:
                records.append(SegmentRecord(j, BloomFilter.from_bytes(payload, length)))
            except InvalidInput as exc:
                raise MalformedReport(str(exc)) from exc
        if offset != len(data):
            raise MalformedReport("trailing bytes after records")
        return cls(client_id, tuple(records), version)

    def to_json(self) -> str:
        """One JSON line with hex payloads, for debugging."""
        return json.dumps({
            "version": self.version,
            "client_id": self.client_id,
            "records": [{"j": j, "bits": s.length, "hex": s.to_bytes().hex()} for j, s in self.records],
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "WireReport":
        try:
            obj = json.loads(line)
            records = tuple(SegmentRecord(int(r["j"]), BloomFilter.from_bytes(bytes.fromhex(r["hex"]), int(r["bits"])))
                            for r in obj["records"])
            return cls(int(obj["client_id"]), records, int(obj["version"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedReport(f"bad JSON report: {exc}") from exc

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str) -> "WireReport":
        try:
            raw = base64.b64decode(text, validate=True)
        except ValueError as exc:
            raise MalformedReport("invalid base64 payload") from exc
        return cls.from_bytes(raw)


def canonical_key(value) -> str:
    """Dedup key: the normalized text, never the Bloom filter."""
    if isinstance(value, str):
        return "s:" + normalize(value)
    if isinstance(value, numbers.Real) and not isinstance(value, bool):
        return "n:" + repr(float(value))
    raise InvalidInput(f"unsupported value type: {type(value).__name__}")


def shuffle_segments(records, rng: np.random.Generator) -> list[SegmentRecord]:
    records = list(records)
    return [records[i] for i in rng.permutation(len(records))]


@dataclass
class ClientState:
    """One logical client. Not thread-safe; give each client its own RNG stream."""
    client_id: int
    encoder: EncoderConfig
    mech: MechanismParams
    dictionary: BucketDictionary
    reported: set = field(default_factory=set)

    def __post_init__(self):
        if self.encoder.l != self.mech.l:
            raise InvalidInput(f"encoder l={self.encoder.l} differs from mechanism l={self.mech.l}")
        if not 0 <= self.client_id < 1 << 64:
            raise InvalidInput("client_id must fit in 64 bits")

    def submit(self, value, rng: np.random.Generator, p_flip: float | None = None) -> WireReport:
        key = canonical_key(value)
        if key in self.reported:
            raise AlreadyReported(key)
        bf = encode(value, self.encoder)
        noisy = perturb(bf, self.mech, self.dictionary, rng, p_flip=p_flip)
        records = [SegmentRecord(j, seg) for f in noisy.filters for j, seg in enumerate(segment(f, self.mech.m))]
        self.reported.add(key)
        return WireReport(self.client_id, tuple(shuffle_segments(records, rng)))


def submit(state: ClientState, value, rng: np.random.Generator, p_flip: float | None = None) -> WireReport:
    return state.submit(value, rng, p_flip)
