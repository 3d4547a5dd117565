"""Command line entry point ``ppcf``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import Corpus, load_word_counts, run_experiment
from .client import ClientState
from .encoding import EncoderConfig
from .errors import AlreadyReported, PPCFError
from .ldp import BucketDictionary, MechanismParams, build_dictionary
from .server import ServerState, handle_line, serve

log = logging.getLogger("ppcf")


def _seed(args) -> int:
    env = os.environ.get("PPCF_SEED")
    return int(env) if env else args.seed


def _add_mech_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("mechanism")
    g.add_argument("--epsilon", type=float, default=6.0)
    g.add_argument("--l", type=int, default=30, help="Bloom filter length in bits")
    g.add_argument("--buckets", type=int, default=10000, help="bucket count used by the randomizer")
    g.add_argument("--s-t", type=float, default=0.8, help="similarity threshold")
    g.add_argument("--m", type=int, default=5, help="segments per filter")


def _mech(args) -> MechanismParams:
    return MechanismParams(epsilon=args.epsilon, l=args.l, B=args.buckets, s_t=args.s_t, m=args.m)


def cmd_build_dict(args) -> int:
    mech = _mech(args)
    d = build_dictionary(mech, t_cap=args.t_cap, seed=_seed(args), exhaustive=args.exhaustive)
    d.save(args.out)
    sizes = [len(b) for b in d.buckets]
    print(f"wrote {args.out}: l={d.l} B={d.B} filters={sum(sizes)} min_per_bucket={min(sizes)}")
    return 0


def _load_or_new_state(args) -> ServerState:
    path = Path(args.state)
    if path.exists():
        return ServerState.load(path)
    mech = _mech(args)
    return ServerState(EncoderConfig(l=mech.l), mech, n_shards=args.shards, n_buckets=args.table_buckets,
                       seed=_seed(args))


def cmd_ingest(args) -> int:
    state = _load_or_new_state(args)
    dictionary = BucketDictionary.load(args.dict)
    if not dictionary.matches(state.mech):
        raise PPCFError("dictionary does not match the server's (l, B)")
    rng = np.random.default_rng(_seed(args))
    corpus = Corpus.from_counts(load_word_counts(args.dataset, args.limit), args.clients, rng)
    clients: dict[int, ClientState] = {}
    p_flip = 0.0 if args.noiseless else None
    inserted = grown = skipped = 0
    for value, cid in corpus.records:
        client = clients.setdefault(cid, ClientState(cid, state.encoder, state.mech, dictionary))
        try:
            report = client.submit(value, rng, p_flip)
        except AlreadyReported:
            skipped += 1
            continue
        summary = state.ingest(report)
        inserted += summary.segments_inserted
        grown += summary.growth_events
    state.save(args.state)
    print(f"records={len(corpus)} duplicates_skipped={skipped} segments={inserted} growth_events={grown}")
    return 0


def cmd_query(args) -> int:
    state = ServerState.load(args.state)
    s_t = args.s_t if args.s_t is not None else state.mech.s_t
    for value in args.value:
        res = state.query_count(value, s_t)
        print(f"{value}\tCOUNT {res.estimate} {res.sim_max:.6f}\tsegments={list(res.segment_counts)}")
    return 0


def cmd_serve(args) -> int:
    state = _load_or_new_state(args)
    if args.listen:
        try:
            serve(state, args.listen)
        except KeyboardInterrupt:
            pass
    else:
        for line in sys.stdin:
            if line.strip().upper() == "QUIT":
                break
            if line.strip():
                print(handle_line(state, line), flush=True)
    if args.save:
        state.save(args.state)
    return 0


def cmd_bench(args) -> int:
    from .bench import ExperimentConfig
    cfg = ExperimentConfig.load(args.config)
    if args.no_plots:
        cfg.plots = False
    result = run_experiment(cfg, args.out)
    print(f"{result['records']} records written to {args.out}")
    for row in result["summary"]:
        print(f"{row['method']:>7} eps={row['epsilon']:<4g} m={row['m']} median_abs_error={row['median_abs_error']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppcf", description="Private fuzzy counting with cuckoo filters.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dict", help="precompute the artificial filter dictionary")
    _add_mech_args(p)
    p.add_argument("--t-cap", type=int, default=64, help="filters kept per bucket")
    p.add_argument("--exhaustive", action="store_true", help="enumerate all 2^l patterns (l <= 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dict)

    def state_args(p):
        p.add_argument("--state", default="ppcf_state.bin", help="server snapshot file")
        p.add_argument("--shards", type=int, default=1)
        p.add_argument("--table-buckets", type=int, default=1024, help="cuckoo buckets per shard")
        p.add_argument("--seed", type=int, default=0)
        _add_mech_args(p)

    p = sub.add_parser("ingest", help="simulate clients reporting a word,count dataset")
    state_args(p)
    p.add_argument("--dataset", default="bundled", help="CSV with word,count columns (default: bundled sample)")
    p.add_argument("--dict", required=True, help="dictionary file from build-dict")
    p.add_argument("--clients", type=int, default=20)
    p.add_argument("--limit", type=int, default=None, help="use only the first N words")
    p.add_argument("--noiseless", action="store_true", help="skip randomization (testing only)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="fuzzy count query against a snapshot")
    p.add_argument("value", nargs="+")
    p.add_argument("--state", default="ppcf_state.bin")
    p.add_argument("--s-t", type=float, default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("serve", help="answer INGEST/QUERY/STATS lines on stdin or a TCP socket")
    state_args(p)
    p.add_argument("--listen", default=None, metavar="HOST:PORT")
    p.add_argument("--save", action="store_true", help="write the snapshot back on exit")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="run an experiment grid and write CSVs and figures")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PPCFError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
