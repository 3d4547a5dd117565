"""Sharded aggregation server and fuzzy count queries."""
from __future__ import annotations

import logging
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

from .client import WireReport
from .cuckoo import CuckooTable
from .encoding import BloomFilter, EncoderConfig, encode, segment, segment_sizes
from .errors import InvalidInput, MalformedReport, PPCFError
from .ldp import MechanismParams

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"PPSV"
SNAPSHOT_VERSION = 1


def segment_key(j: int, seg: BloomFilter) -> bytes:
    """Hash input for a segment, prefixed with its position so equal bit patterns
    at different positions land in different fingerprint spaces."""
    return struct.pack(">BH", j, seg.length) + seg.to_bytes()


@dataclass(frozen=True)
class IngestSummary:
    segments_inserted: int
    growth_events: int


@dataclass(frozen=True)
class QueryResult:
    estimate: int
    sim_max: float
    segment_counts: tuple[int, ...]


def fuzzy_estimate(counts, s_t: float) -> tuple[int, float]:
    """Estimate and best achievable similarity from per-segment counts.

    Segments with a zero count are treated as mismatches. If the fraction of
    matching segments reaches ``s_t`` the estimate is the smallest nonzero count.
    """
    m = len(counts)
    nonzero = [c for c in counts if c > 0]
    sim_max = len(nonzero) / m
    # tolerate 2/3 vs 0.6667 style thresholds
    if nonzero and sim_max >= s_t - 1e-9:
        return min(nonzero), sim_max
    return 0, sim_max


@dataclass
class ServerState:
    encoder: EncoderConfig
    mech: MechanismParams
    n_shards: int = 1
    n_buckets: int = 1024
    bucket_size: int = 4
    fingerprint_bits: int = 16
    max_kicks: int = 500
    seed: int = 0
    shards: list[CuckooTable] = field(init=False)
    ingest_ns: int = field(default=0, init=False)
    query_ns: int = field(default=0, init=False)
    n_queries: int = field(default=0, init=False)
    n_reports: int = field(default=0, init=False)

    def __post_init__(self):
        if self.n_shards < 1:
            raise InvalidInput("need at least one shard")
        if self.encoder.l != self.mech.l:
            raise InvalidInput(f"encoder l={self.encoder.l} differs from mechanism l={self.mech.l}")
        self.shards = [CuckooTable(self.n_buckets, self.bucket_size, self.fingerprint_bits,
                                   self.max_kicks, self.seed + i) for i in range(self.n_shards)]
        self._locks = [threading.Lock() for _ in self.shards]
        self._sizes = segment_sizes(self.mech.l, self.mech.m)

    def shard_of(self, j: int) -> int:
        return j % self.n_shards

    @property
    def probes(self) -> int:
        return sum(t.probes for t in self.shards)

    def validate(self, report: WireReport) -> None:
        m = self.mech.m
        for j, seg in report.records:
            if not 0 <= j < m:
                raise MalformedReport(f"segment index {j} outside [0, {m})")
            if seg.length != self._sizes[j]:
                raise MalformedReport(f"segment {j} has {seg.length} bits, expected {self._sizes[j]}")

    def ingest(self, report: WireReport) -> IngestSummary:
        """Insert every segment of ``report``. The report is validated in full
        first, so a malformed one leaves the tables untouched."""
        self.validate(report)
        start = time.perf_counter_ns()
        by_shard: dict[int, list[bytes]] = {}
        for j, seg in report.records:
            by_shard.setdefault(self.shard_of(j), []).append(segment_key(j, seg))
        grown = 0
        for s, keys in by_shard.items():
            table = self.shards[s]
            with self._locks[s]:
                for key in keys:
                    grown += table.insert(key).grew
        self.ingest_ns += time.perf_counter_ns() - start
        self.n_reports += 1
        return IngestSummary(len(report.records), grown)

    def ingest_bytes(self, data: bytes) -> IngestSummary:
        return self.ingest(WireReport.from_bytes(data))

    def segment_counts(self, bf: BloomFilter) -> tuple[int, ...]:
        counts = []
        for j, seg in enumerate(segment(bf, self.mech.m)):
            counts.append(self.shards[self.shard_of(j)].count(segment_key(j, seg)))
        return tuple(counts)

    def query_count(self, value, s_t: float, m: int | None = None) -> QueryResult:
        if m is not None and m != self.mech.m:
            raise InvalidInput(f"query m={m} differs from ingestion m={self.mech.m}")
        if not 0 < s_t <= 1:
            raise InvalidInput(f"similarity threshold must be in (0, 1], got {s_t}")
        start = time.perf_counter_ns()
        counts = self.segment_counts(encode(value, self.encoder))
        estimate, sim_max = fuzzy_estimate(counts, s_t)
        self.query_ns += time.perf_counter_ns() - start
        self.n_queries += 1
        return QueryResult(estimate, sim_max, counts)

    def stats(self) -> dict:
        shards = []
        for i, table in enumerate(self.shards):
            with self._locks[i]:
                st = table.stats()
            shards.append(st)
        return {
            "shards": len(shards),
            "reports": self.n_reports,
            "queries": self.n_queries,
            "probes": self.probes,
            "load": sum(s.load for s in shards),
            "total_count": sum(s.total_count for s in shards),
            "growth_events": sum(s.growth_events for s in shards),
            "occupied": sum(s.occupied_buckets for s in shards),
            "ingest_ns": self.ingest_ns,
            "query_ns": self.query_ns,
            "per_shard": shards,
        }

    def to_bytes(self) -> bytes:
        """Snapshot: header, encoder and mechanism configs, then each shard."""
        enc = self.encoder.to_text().encode()
        mech = self.mech.to_text().encode()
        parts = [struct.pack("<4sBHII", SNAPSHOT_MAGIC, SNAPSHOT_VERSION, self.n_shards, len(enc), len(mech)),
                 enc, mech]
        for i, table in enumerate(self.shards):
            with self._locks[i]:
                blob = table.to_bytes()
            parts += [struct.pack("<Q", len(blob)), blob]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ServerState":
        try:
            magic, version, n_shards, n_enc, n_mech = struct.unpack_from("<4sBHII", data, 0)
        except struct.error as exc:
            raise InvalidInput("truncated server snapshot") from exc
        if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
            raise InvalidInput("not a server snapshot")
        offset = struct.calcsize("<4sBHII")
        encoder = EncoderConfig.from_text(data[offset:offset + n_enc].decode())
        offset += n_enc
        mech = MechanismParams.from_text(data[offset:offset + n_mech].decode())
        offset += n_mech
        tables = []
        for _ in range(n_shards):
            try:
                (n,) = struct.unpack_from("<Q", data, offset)
            except struct.error as exc:
                raise InvalidInput("truncated server snapshot") from exc
            offset += 8
            tables.append(CuckooTable.from_bytes(data[offset:offset + n]))
            offset += n
        if offset != len(data):
            raise InvalidInput("trailing bytes after server snapshot")
        first = tables[0]
        state = cls(encoder, mech, n_shards, first.n_buckets, first.default_bucket_size,
                    first.fingerprint_bits, first.max_kicks, first.seed)
        state.shards = tables
        return state

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ServerState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def parse_query_value(text: str):
    """Protocol values that parse as a finite number are queried as numbers."""
    try:
        x = float(text)
    except ValueError:
        return text
    return x if x == x and abs(x) != float("inf") else text


def handle_line(state: ServerState, line: str) -> str:
    """Answer one protocol request. Responses never contain a trailing newline."""
    line = line.strip()
    cmd, _, rest = line.partition(" ")
    cmd = cmd.upper()
    try:
        if cmd == "INGEST":
            summary = state.ingest(WireReport.from_base64(rest.strip()))
            return f"OK {summary.segments_inserted} {summary.growth_events}"
        if cmd == "QUERY":
            parts = rest.rsplit(" ", 2)
            if len(parts) != 3:
                return "ERR usage: QUERY <value> <s_t> <m>"
            value, s_t, m = parts
            res = state.query_count(parse_query_value(value), float(s_t), int(m))
            return f"COUNT {res.estimate} {res.sim_max:.6f}"
        if cmd == "STATS":
            st = state.stats()
            lines = [f"{k}={v}" for k, v in st.items() if k != "per_shard"]
            for i, s in enumerate(st["per_shard"]):
                lines.append(f"shard{i}.load={s.load}")
                lines.append(f"shard{i}.bucket_size={s.bucket_size}")
                lines.append(f"shard{i}.growth_events={s.growth_events}")
                lines.append(f"shard{i}.occupied={s.occupied_buckets}")
            lines.append(".")  # end of multi-line reply
            return "\n".join(lines)
    except (PPCFError, ValueError) as exc:
        return f"ERR {exc}"
    return f"ERR unknown command {cmd!r}"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").strip()
            if not line:
                continue
            if line.upper() == "QUIT":
                return
            self.wfile.write(handle_line(self.server.state, line).encode() + b"\n")


class LineServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, state: ServerState):
        super().__init__(address, _Handler)
        self.state = state


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not port.isdigit():
        raise InvalidInput(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def serve(state: ServerState, addr: str) -> None:
    with LineServer(parse_address(addr), state) as srv:
        log.info("listening on %s:%d", *srv.server_address[:2])
        srv.serve_forever()
