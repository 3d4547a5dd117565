"""Datasets, synthetic corruption, brute-force oracle, fpr measurement and the experiment runner."""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import string
import time
from collections import Counter
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import NamedTuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .baselines import RapporConfig, RapporMethod, SketchConfig, SketchMethod
from .client import ClientState, WireReport
from .encoding import EncoderConfig, normalize, qgram_dice, qgrams
from .errors import InvalidInput
from .ldp import BucketDictionary, MechanismParams, build_dictionary
from .server import ServerState

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EDIT_OPS = ("insert", "delete", "swap")
EDIT_PROBS = (0.3, 0.3, 0.4)
ALPHABET = string.ascii_lowercase


# --- datasets ---------------------------------------------------------------

def bundled_sample_path() -> Path:
    return Path(str(files("ppcf") / "data" / "words_sample.csv"))


def load_word_counts(path=None, limit: int | None = None) -> list[tuple[str, int]]:
    """(word, count) rows from a CSV with a header containing ``word`` and ``count``."""
    path = bundled_sample_path() if path in (None, "bundled") else Path(path)
    if not path.exists():
        raise InvalidInput(f"dataset not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"word", "count"} <= set(reader.fieldnames):
            raise InvalidInput(f"{path}: expected a header with 'word' and 'count' columns")
        rows = [(r["word"], int(r["count"])) for r in reader]
    return rows[:limit] if limit else rows


@dataclass(frozen=True)
class Corpus:
    """Records as (value, client_id); every record belongs to exactly one client."""
    records: tuple[tuple[str, int], ...]
    n_clients: int

    @classmethod
    def from_counts(cls, word_counts, n_clients: int, rng: np.random.Generator) -> "Corpus":
        if n_clients < 1:
            raise InvalidInput("need at least one client")
        values = [w for w, c in word_counts for _ in range(c)]
        order = rng.permutation(len(values))
        clients = rng.integers(0, n_clients, size=len(values))
        return cls(tuple((values[i], int(c)) for i, c in zip(order, clients)), n_clients)

    def __len__(self) -> int:
        return len(self.records)

    def counts(self) -> Counter:
        return Counter(v for v, _ in self.records)

    def distinct(self) -> list[str]:
        return list(dict.fromkeys(v for v, _ in self.records))

    def reports(self) -> list[tuple[int, str]]:
        """(client_id, value) in record order with repeats per client dropped."""
        seen = set()
        out = []
        for value, client in self.records:
            key = (client, normalize(value))
            if key not in seen:
                seen.add(key)
                out.append((client, value))
        return out

    def deduplicated(self) -> "Corpus":
        return Corpus(tuple((v, c) for c, v in self.reports()), self.n_clients)


# --- synthetic corruption ---------------------------------------------------

class Corruption(NamedTuple):
    text: str
    ops: tuple[str, ...]

    @property
    def edited(self) -> bool:
        return bool(self.ops)


def _apply_edit(text: str, op: str, rng: np.random.Generator) -> str | None:
    n = len(text)
    if op == "insert":
        pos = int(rng.integers(n + 1))
        return text[:pos] + ALPHABET[int(rng.integers(26))] + text[pos:]
    if op == "delete":
        if n < 2:
            return None
        pos = int(rng.integers(n))
        return text[:pos] + text[pos + 1:]
    if n < 2:
        return None
    pos = int(rng.integers(n - 1))
    return text[:pos] + text[pos + 1] + text[pos] + text[pos + 2:]


def draw_edit_op(rng: np.random.Generator) -> str:
    return EDIT_OPS[int(rng.choice(3, p=EDIT_PROBS))]


def corrupt_value(value: str, s_t: float, rng: np.random.Generator, q: int = 2,
                  max_attempts: int = 20) -> Corruption:
    """Apply random inserts/deletes/adjacent swaps while q-gram Dice to ``value`` stays >= s_t.

    An edit that would break the threshold is rolled back and ends the run.
    If the very first edit breaks it, other random edits are tried before
    giving up and returning the value unchanged.
    """
    if not value:
        raise InvalidInput("cannot corrupt an empty value")
    if s_t >= 1.0:
        return Corruption(value, ())
    text, ops = value, []
    attempts = 0
    while len(ops) < 4 * len(value) + 4:
        op = draw_edit_op(rng)
        candidate = _apply_edit(text, op, rng)
        if candidate is not None and candidate not in (text, value) and qgram_dice(value, candidate, q) >= s_t:
            text = candidate
            ops.append(op)
            continue
        if ops:
            break
        attempts += 1
        if attempts >= max_attempts:
            break
    return Corruption(text, tuple(ops))


def make_synthetic(corpus: Corpus, s_t: float, rng: np.random.Generator, fraction: float = 0.5) -> Corpus:
    """Replace floor(count * fraction) occurrences of each value with corrupted variants."""
    if not 0 <= fraction <= 1:
        raise InvalidInput("fraction must be in [0, 1]")
    positions: dict[str, list[int]] = {}
    for i, (value, _) in enumerate(corpus.records):
        positions.setdefault(value, []).append(i)
    records = list(corpus.records)
    for value, idx in positions.items():
        n = math.floor(len(idx) * fraction)
        if n == 0:
            continue
        for i in rng.choice(idx, size=n, replace=False).tolist():
            records[i] = (corrupt_value(value, s_t, rng).text, records[i][1])
    return Corpus(tuple(records), corpus.n_clients)


# --- ground truth -----------------------------------------------------------

class OracleCount(NamedTuple):
    exact: int
    fuzzy: int


class Oracle:
    """Brute-force exact and fuzzy counts over a corpus's distinct values."""

    def __init__(self, counts: Counter, q: int = 2):
        self.q = q
        self.counts = Counter({normalize(v): 0 for v in counts})
        for v, c in counts.items():
            self.counts[normalize(v)] += c
        self._grams = {v: set(qgrams(v, q)) for v in self.counts}

    @classmethod
    def from_corpus(cls, corpus: Corpus, q: int = 2, dedup: bool = True) -> "Oracle":
        return cls((corpus.deduplicated() if dedup else corpus).counts(), q)

    def count(self, query: str, s_t: float) -> OracleCount:
        query = normalize(query)
        g = set(qgrams(query, self.q))
        fuzzy = 0
        for v, grams in self._grams.items():
            if not g and not grams:
                sim = 1.0
            else:
                sim = 2 * len(g & grams) / (len(g) + len(grams))
            if sim >= s_t:
                fuzzy += self.counts[v]
        return OracleCount(self.counts.get(query, 0), fuzzy)


def oracle_counts(corpus: Corpus, query: str, s_t: float, dedup: bool = True) -> OracleCount:
    return Oracle.from_corpus(corpus, dedup=dedup).count(query, s_t)


# --- methods under test -----------------------------------------------------

class PpcfMethod:
    """The cuckoo-filter pipeline behind the same report/ingest/estimate interface as the baselines."""
    name = "ppcf"

    def __init__(self, encoder: EncoderConfig, mech: MechanismParams, dictionary: BucketDictionary,
                 query_s_t: float, p_flip: float | None = None, **server_kw):
        self.encoder = encoder
        self.mech = mech
        self.dictionary = dictionary
        self.query_s_t = query_s_t
        self.p_flip = p_flip
        self.server = ServerState(encoder, mech, **server_kw)
        self.clients: dict[int, ClientState] = {}

    def report(self, value, client_id: int, rng: np.random.Generator) -> bytes:
        state = self.clients.get(client_id)
        if state is None:
            state = self.clients[client_id] = ClientState(client_id, self.encoder, self.mech, self.dictionary)
        return state.submit(value, rng, self.p_flip).to_bytes()

    def ingest(self, data: bytes) -> None:
        self.server.ingest(WireReport.from_bytes(data))

    def ingest_many(self, items, rng: np.random.Generator) -> None:
        for client_id, value in items:
            self.ingest(self.report(value, client_id, rng))

    def estimate(self, value) -> float:
        return float(self.server.query_count(value, self.query_s_t).estimate)

    def lookup(self, value) -> float:
        return self.estimate(value)


def random_words(rng: np.random.Generator, n: int, alphabet: str, length: int = 8) -> list[str]:
    """``n`` distinct random words over ``alphabet``."""
    letters = np.array(list(alphabet))
    out: dict[str, None] = {}
    while len(out) < n:
        batch = letters[rng.integers(0, len(letters), size=(2 * (n - len(out)) + 16, length))]
        for row in batch:
            out.setdefault("".join(row), None)
            if len(out) == n:
                break
    return list(out)


def measure_fpr(method, n_insert: int, n_probe: int, rng: np.random.Generator) -> float:
    """Fraction of absent probes with a nonzero raw lookup after ``n_insert`` distinct insertions.

    Inserted and probe values are drawn from disjoint alphabets, so no probe
    shares a q-gram with (and so is never similar to) any inserted value.
    """
    inserted = random_words(rng, n_insert, ALPHABET[:13])
    probes = random_words(rng, n_probe, ALPHABET[13:])
    method.ingest_many(((i, v) for i, v in enumerate(inserted)), rng)
    return sum(1 for v in probes if method.lookup(v) > 0) / n_probe if n_probe else 0.0


# --- experiment runner ------------------------------------------------------

RECORD_FIELDS = ("schema_version", "method", "epsilon", "m", "seed", "query", "true_exact_count",
                 "true_fuzzy_count", "estimate", "abs_error", "latency_ns", "n_inserted_so_far")
TIMING_FIELDS = ("schema_version", "method", "epsilon", "m", "seed", "op", "quantile", "latency_ns")
FPR_FIELDS = ("schema_version", "method", "seed", "n_inserted", "fpr")
SUMMARY_FIELDS = ("schema_version", "method", "epsilon", "m", "n_queries", "median_abs_error",
                  "mean_abs_error", "seeds")


@dataclass
class ExperimentRecord:
    method: str
    epsilon: float
    m: int
    seed: int
    query: str
    true_exact_count: int
    true_fuzzy_count: int
    estimate: float
    abs_error: float
    latency_ns: int
    n_inserted_so_far: int

    def row(self) -> dict:
        d = dict(self.__dict__)
        d["estimate"] = _fmt(self.estimate)
        d["abs_error"] = _fmt(self.abs_error)
        d["schema_version"] = SCHEMA_VERSION
        return d


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


@dataclass
class ExperimentConfig:
    seed: int = 7
    dataset: str = "bundled"
    n_words: int | None = 300
    n_clients: int = 20
    synthetic: bool = True
    corrupt_fraction: float = 0.5
    corrupt_s_t: float = 0.8
    query_s_t: float = 0.8
    truth: str = "fuzzy"
    methods: tuple[str, ...] = ("ppcf", "rappor", "cms")
    repeats: int = 1
    max_queries: int | None = None
    deterministic: bool = False
    batch_baselines: bool = False
    plots: bool = True
    epsilons: tuple[float, ...] = (2, 4, 6, 8, 10)
    ms: tuple[int, ...] = (1, 3, 5)
    ppcf: dict = field(default_factory=dict)
    rappor: dict = field(default_factory=dict)
    cms: dict = field(default_factory=dict)
    fpr_n_insert: tuple[int, ...] = ()
    fpr_n_probe: int = 1000

    _RUN_KEYS = ("seed", "dataset", "n_words", "n_clients", "synthetic", "corrupt_fraction", "corrupt_s_t",
                 "query_s_t", "truth", "methods", "repeats", "max_queries", "deterministic", "batch_baselines", "plots")

    @classmethod
    def from_mapping(cls, doc: dict) -> "ExperimentConfig":
        run = dict(doc.get("run", {}))
        unknown = set(run) - set(cls._RUN_KEYS)
        if unknown:
            raise InvalidInput(f"unknown [run] keys: {sorted(unknown)}")
        cfg = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in run.items()})
        grid = doc.get("grid", {})
        cfg.epsilons = tuple(float(e) for e in grid.get("epsilon", cfg.epsilons))
        cfg.ms = tuple(int(m) for m in grid.get("m", cfg.ms))
        cfg.ppcf = dict(doc.get("ppcf", {}))
        cfg.rappor = dict(doc.get("rappor", {}))
        cfg.cms = dict(doc.get("cms", {}))
        fpr = doc.get("fpr", {})
        cfg.fpr_n_insert = tuple(int(n) for n in fpr.get("n_insert", ()))
        cfg.fpr_n_probe = int(fpr.get("n_probe", cfg.fpr_n_probe))
        if cfg.truth not in ("fuzzy", "exact"):
            raise InvalidInput("truth must be 'fuzzy' or 'exact'")
        if os.environ.get("PPCF_SEED"):
            cfg.seed = int(os.environ["PPCF_SEED"])
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise InvalidInput(f"config not found: {path}")
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))


PPCF_DEFAULTS = dict(l=20, k=2, q=2, B=32, s_t=0.8, t_cap=256, n_buckets=1024, bucket_size=4,
                     fingerprint_bits=16, max_kicks=500, noiseless=False, n_shards=1)


class _Cell(NamedTuple):
    epsilon: float
    m: int
    seed: int


def _seed_for(*parts) -> np.random.Generator:
    return np.random.default_rng([int(round(p * 1000)) if isinstance(p, float) else int(p) for p in parts])


class ExperimentRunner:
    """Runs every (method, epsilon, m, repeat) cell of a config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.p = {**PPCF_DEFAULTS, **cfg.ppcf}
        unknown = set(self.p) - set(PPCF_DEFAULTS)
        if unknown:
            raise InvalidInput(f"unknown [ppcf] keys: {sorted(unknown)}")
        self._dicts: dict[tuple, BucketDictionary] = {}
        self._baseline_cache: dict[tuple, list[ExperimentRecord]] = {}

    def corpus(self, repeat: int) -> tuple[Corpus, list[str]]:
        cfg = self.cfg
        rng = _seed_for(cfg.seed, repeat, 1)
        base = Corpus.from_counts(load_word_counts(cfg.dataset, cfg.n_words), cfg.n_clients, rng)
        queries = base.distinct()
        if cfg.synthetic:
            base = make_synthetic(base, cfg.corrupt_s_t, rng, cfg.corrupt_fraction)
        if cfg.max_queries:
            queries = queries[:cfg.max_queries]
        return base, queries

    def dictionary(self, mech: MechanismParams) -> BucketDictionary:
        key = (mech.l, mech.B)
        if key not in self._dicts:
            self._dicts[key] = build_dictionary(mech, t_cap=self.p["t_cap"], seed=self.cfg.seed)
        return self._dicts[key]

    def make_method(self, name: str, epsilon: float, m: int):
        p = self.p
        if name == "ppcf":
            noiseless = bool(p["noiseless"])
            mech = MechanismParams(epsilon=epsilon, l=p["l"], B=p["B"], s_t=1.0 if noiseless else p["s_t"], m=m)
            enc = EncoderConfig(l=p["l"], k=p["k"], q=p["q"])
            return PpcfMethod(enc, mech, self.dictionary(mech), self.cfg.query_s_t,
                              p_flip=0.0 if noiseless else None, n_shards=p["n_shards"],
                              n_buckets=p["n_buckets"], bucket_size=p["bucket_size"],
                              fingerprint_bits=p["fingerprint_bits"], max_kicks=p["max_kicks"], seed=self.cfg.seed)
        if name == "rappor":
            return RapporMethod(RapporConfig(**self.cfg.rappor))
        if name == "cms":
            return SketchMethod(SketchConfig(**{"epsilon": epsilon, **self.cfg.cms}))
        raise InvalidInput(f"unknown method {name!r}")

    def run_cell(self, name: str, cell: _Cell, corpus: Corpus, queries, oracle: Oracle,
                 timings: dict) -> list[ExperimentRecord]:
        cfg = self.cfg
        # baselines ignore m; RAPPOR also ignores epsilon
        key = (name, cell.seed, None if name == "rappor" else cell.epsilon)
        if name != "ppcf" and key in self._baseline_cache:
            return [ExperimentRecord(**{**r.__dict__, "epsilon": cell.epsilon, "m": cell.m})
                    for r in self._baseline_cache[key]]
        rng = _seed_for(cfg.seed, cell.seed, cell.epsilon, cell.m, sum(map(ord, name)))
        method = self.make_method(name, cell.epsilon, cell.m)
        reports = corpus.reports()
        insert_ns = []
        if name == "ppcf" or not cfg.batch_baselines:
            for client, value in reports:
                t0 = time.perf_counter_ns()
                method.ingest(method.report(value, client, rng))
                insert_ns.append(time.perf_counter_ns() - t0)
        else:
            method.ingest_many(reports, rng)
        records, query_ns = [], []
        for q in queries:
            truth = oracle.count(q, cfg.query_s_t)
            t0 = time.perf_counter_ns()
            est = method.estimate(q)
            dt = time.perf_counter_ns() - t0
            query_ns.append(dt)
            target = truth.fuzzy if cfg.truth == "fuzzy" else truth.exact
            records.append(ExperimentRecord(name, cell.epsilon, cell.m, cell.seed, q, truth.exact, truth.fuzzy,
                                            est, abs(est - target), 0 if cfg.deterministic else dt, len(reports)))
        timings[(name, cell.epsilon, cell.m, cell.seed)] = (insert_ns, query_ns)
        if name != "ppcf":
            self._baseline_cache[key] = records
        return records

    def iter_records(self, timings: dict | None = None):
        """Yield ExperimentRecords for every grid cell, repeat by repeat."""
        cfg = self.cfg
        timings = {} if timings is None else timings
        for repeat in range(cfg.repeats):
            seed = cfg.seed + repeat
            corpus, queries = self.corpus(repeat)
            oracle = Oracle.from_corpus(corpus)
            for eps in cfg.epsilons:
                for m in cfg.ms:
                    for name in cfg.methods:
                        log.info("cell %s eps=%g m=%d seed=%d", name, eps, m, seed)
                        yield from self.run_cell(name, _Cell(eps, m, seed), corpus, queries, oracle, timings)

    def fpr_rows(self):
        cfg = self.cfg
        for repeat in range(cfg.repeats):
            seed = cfg.seed + repeat
            for n in cfg.fpr_n_insert:
                for name in cfg.methods:
                    method = self.make_method(name, cfg.epsilons[0], cfg.ms[0])
                    fpr = measure_fpr(method, n, cfg.fpr_n_probe, _seed_for(seed, n, 2))
                    yield {"schema_version": SCHEMA_VERSION, "method": name, "seed": seed,
                           "n_inserted": n, "fpr": _fmt(fpr)}

    def run(self, out_dir) -> dict:
        cfg = self.cfg
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records: list[ExperimentRecord] = []
        timings: dict = {}
        fpr_rows: list[dict] = []
        try:
            for record in self.iter_records(timings):
                records.append(record)
            for row in self.fpr_rows():
                fpr_rows.append(row)
        except KeyboardInterrupt:
            log.warning("interrupted; writing partial results")
        summary = summarize(records)
        write_csv(out / "records.csv", RECORD_FIELDS, (r.row() for r in records))
        write_csv(out / "timing.csv", TIMING_FIELDS, [] if cfg.deterministic else timing_rows(timings))
        write_csv(out / "fpr.csv", FPR_FIELDS, fpr_rows)
        write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
        if cfg.plots:
            from .plotting import render_all
            render_all(out)
        return {"records": len(records), "summary": summary, "fpr": fpr_rows}


def summarize(records) -> list[dict]:
    groups: dict[tuple, list[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault((r.method, r.epsilon, r.m), []).append(r)
    rows = []
    for (method, eps, m), rs in groups.items():
        errs = np.array([r.abs_error for r in rs])
        rows.append({"schema_version": SCHEMA_VERSION, "method": method, "epsilon": eps, "m": m,
                     "n_queries": len(rs), "median_abs_error": _fmt(np.median(errs)),
                     "mean_abs_error": _fmt(errs.mean()), "seeds": len({r.seed for r in rs})})
    return rows


CDF_QUANTILES = tuple(i / 20 for i in range(1, 21))


def timing_rows(timings: dict):
    for (name, eps, m, seed), (insert_ns, query_ns) in timings.items():
        for op, samples in (("insert", insert_ns), ("query", query_ns)):
            if not samples:
                continue
            values = np.quantile(np.array(samples, dtype=float), CDF_QUANTILES)
            for qt, v in zip(CDF_QUANTILES, values):
                yield {"schema_version": SCHEMA_VERSION, "method": name, "epsilon": eps, "m": m, "seed": seed,
                       "op": op, "quantile": _fmt(qt), "latency_ns": int(v)}


def write_csv(path, fields, rows) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\r\n")
    writer.writeheader()
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


def run_experiment(config, out_dir) -> dict:
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.load(config)
    return ExperimentRunner(cfg).run(out_dir)
