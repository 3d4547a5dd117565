"""One test per acceptance criterion. Each prints a PASS/FAIL line with the observed values and tolerance."""
import math
import random
from collections import Counter

import numpy as np

from ppcf.baselines import SketchConfig, SketchMethod
from ppcf.bench import ExperimentConfig, ExperimentRunner, PpcfMethod, measure_fpr
from ppcf.client import SegmentRecord, WireReport
from ppcf.cuckoo import CuckooTable
from ppcf.encoding import BloomFilter, EncoderConfig, concat, encode, segment
from ppcf.ldp import (MechanismParams, build_dictionary, bucket_pair, count_lower_bound, count_upper_bound,
                      flip_probability, flip_probability_pairwise, perturb, ratio_bound_check)
from ppcf.server import ServerState

EXAMPLE = dict(epsilon=6, l=20, B=10000, s_t=0.7)


def _within(x, target, tol):
    return abs(x - target) <= tol


def test_flip_probability_regression(acceptance):
    p = MechanismParams(**EXAMPLE)
    fp = flip_probability(p)
    ok = _within(fp, 0.004, 0.0005) and _within(p.s, 0.61, 0.005)
    acceptance("flip probability", ok, f"p={fp:.5f} (0.004 ± 0.0005), s={p.s:.4f} (0.61 ± 0.005)")


def test_count_bound_regression(acceptance):
    got = {f"lower m={m}": count_lower_bound(100, MechanismParams(**EXAMPLE, m=m)) for m in (4, 2, 5)}
    got["upper n=1000"] = count_upper_bound(100, 1000, MechanismParams(**EXAMPLE, m=4))
    want = {"lower m=4": 99.19, "lower m=2": 91.03, "lower m=5": 99.75, "upper n=1000": 102.47}
    misses = [k for k in want if not _within(got[k], want[k], 0.05)]
    detail = ", ".join(f"{k}={got[k]:.2f} (want {want[k]})" for k in want) + " ± 0.05"
    acceptance("count bounds", not misses, detail + (f"; off: {misses}" if misses else ""))


def test_ldp_ratio_inequality(acceptance):
    failures, pairwise_checked, pairwise_bad = [], 0, []
    for l in (10, 20, 30):
        for s_t in (0.7, 0.8, 1.0):
            for B in (2 ** 8, 2 ** 12):
                for eps in (2, 6, 10):
                    p = MechanismParams(epsilon=eps, l=l, B=B, s_t=s_t)
                    if not ratio_bound_check(p).holds:
                        failures.append((l, s_t, B, eps))
                    if p.s * math.exp(eps) >= 1:
                        pairwise_checked += 1
                        if flip_probability_pairwise(p) < flip_probability(p):
                            pairwise_bad.append((l, s_t, B, eps))
    ok = not failures and not pairwise_bad
    acceptance("LDP ratio inequality", ok,
               f"ratio check failed on {len(failures)}/54 grid points; pairwise >= flip failed on "
               f"{len(pairwise_bad)}/{pairwise_checked} points with s·e^eps >= 1")


def test_empirical_rr_marginals(acceptance):
    mech = MechanismParams(epsilon=8, l=20, B=100, s_t=0.8)
    d = build_dictionary(mech, t_cap=16, seed=0)
    x = encode("peter", EncoderConfig(l=20))
    real = bucket_pair(x, mech.B, d.routing_seed)[0]
    rng = np.random.default_rng(0)
    trials = 100_000
    hits = np.zeros(mech.B)
    for _ in range(trials):
        hits[list(perturb(x, mech, d, rng).bucket_indices)] += 1
    p = mech.p_flip
    freq = hits / trials
    expected = np.full(mech.B, p)
    expected[real] = 1 - p
    se = np.sqrt(expected * (1 - expected) / trials)
    z = np.abs(freq - expected) / se
    worst = int(np.argmax(z))
    acceptance("empirical RR marginals", bool((z <= 3).all()),
               f"p_flip={p:.4f}, real bucket freq={freq[real]:.4f} vs {1 - p:.4f}, "
               f"max |z|={z.max():.2f} at bucket {worst} (limit 3 SE)")


def _run(doc):
    return list(ExperimentRunner(ExperimentConfig.from_mapping(doc)).iter_records())


def test_noiseless_exactness(acceptance):
    records = _run({"run": {"seed": 1, "n_words": 1000, "n_clients": 20, "synthetic": False, "truth": "exact",
                            "query_s_t": 1.0, "methods": ["ppcf"], "deterministic": True, "plots": False},
                    "grid": {"epsilon": [8], "m": [1]},
                    "ppcf": {"l": 30, "noiseless": True, "fingerprint_bits": 16, "t_cap": 4}})
    errors = [r.abs_error for r in records]
    exact = sum(e == 0 for e in errors) / len(errors)
    worst = max(errors)
    acceptance("noiseless exactness", exact >= 0.99 and worst <= 2,
               f"{exact:.2%} of {len(errors)} words exact (>= 99%), max error {worst:g} (<= 2)")


def test_fuzzy_correctness_noiseless(acceptance):
    records = _run({"run": {"seed": 2, "n_words": None, "n_clients": 20, "synthetic": True, "corrupt_s_t": 0.8,
                            "query_s_t": 0.8, "methods": ["ppcf", "rappor", "cms"], "deterministic": True,
                            "batch_baselines": True, "plots": False},
                    "grid": {"epsilon": [8], "m": [5]},
                    "ppcf": {"l": 100, "noiseless": True, "t_cap": 4}})
    by_method = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    med = {k: float(np.median([r.abs_error for r in rs])) for k, rs in by_method.items()}
    fuzzy_med = float(np.median([r.true_fuzzy_count for r in by_method["ppcf"]]))
    ok = med["ppcf"] <= 0.1 * fuzzy_med and med["ppcf"] < med["rappor"] and med["ppcf"] < med["cms"]
    acceptance("fuzzy correctness (noiseless)", ok,
               f"median error ppcf={med['ppcf']:g} (<= 10% of median fuzzy count {fuzzy_med:g}), "
               f"rappor={med['rappor']:g}, cms={med['cms']:g} (ppcf must be strictly lower)")


def test_bounded_fpr_under_volume(acceptance):
    mech = MechanismParams(epsilon=8, l=30, B=64, s_t=1.0, m=1)
    cuckoo = PpcfMethod(EncoderConfig(l=30), mech, build_dictionary(mech, t_cap=4, seed=0), 1.0, p_flip=0.0,
                        n_buckets=1024, fingerprint_bits=16)
    ours = measure_fpr(cuckoo, 100_000, 10_000, np.random.default_rng(5))
    sketch = SketchMethod(SketchConfig(epsilon=8, width=1024))
    theirs = measure_fpr(sketch, 100_000, 10_000, np.random.default_rng(6))
    acceptance("bounded fpr under volume", ours <= 0.01 and theirs >= 0.99,
               f"cuckoo fpr={ours:.4f} (<= 0.01), sketch fpr={theirs:.4f} (>= 0.99) after 100000 insertions")


def test_query_cost(acceptance):
    enc = EncoderConfig(l=30)
    seen = []
    for m in (1, 3, 5):
        srv = ServerState(enc, MechanismParams(epsilon=8, l=30, B=64, s_t=1.0, m=m))
        inserted = 0
        for n in (0, 100, 5000):
            while inserted < n:
                srv.ingest(WireReport(inserted, tuple(SegmentRecord(j, s) for j, s in
                                                      enumerate(segment(encode(f"w{inserted}", enc), m)))))
                inserted += 1
            before = srv.probes
            srv.query_count("probe", 0.8)
            seen.append((m, n, srv.probes - before))
    ok = all(d == 2 * m for m, _, d in seen)
    acceptance("query cost", ok, "probes per query " + ", ".join(f"m={m},n={n}:{d}" for m, n, d in seen)
               + " (want 2m)")


def test_structure_invariants(acceptance):
    rnd = random.Random(0)
    problems = Counter()
    for _ in range(500):
        n = rnd.randint(1, 200)
        f = BloomFilter(rnd.getrandbits(n), n)
        m = rnd.randint(1, min(n, 8))
        problems["round trip"] += concat(segment(f, m)) != f
    for trial in range(1000):
        table = CuckooTable(n_buckets=rnd.choice([1, 2, 4, 8, 16]), bucket_size=rnd.randint(1, 3),
                            fingerprint_bits=rnd.choice([4, 8, 16]), max_kicks=rnd.randint(0, 30), seed=trial)
        pool = [rnd.randbytes(rnd.randint(1, 6)) for _ in range(rnd.randint(1, 40))]
        inserted = [rnd.choice(pool) for _ in range(rnd.randint(1, 120))]
        for key in inserted:
            table.insert(key)
        homes, oracle = {}, Counter()
        for key in inserted:
            i1, i2, fp = table.candidate_buckets(key)
            problems["xor involution"] += table.alt_index(i2, fp) != i1 or table.alt_index(i1, fp) != i2
            homes.setdefault(fp, set()).update((i1, i2))
            oracle[(frozenset((i1, i2)), fp)] += 1
        for idx, bucket in enumerate(table.buckets):
            problems["reachability"] += sum(idx not in homes.get(fp, ()) for fp in bucket)
        for key in set(inserted):
            i1, i2, fp = table.candidate_buckets(key)
            problems["multiset oracle"] += table.count(key) != oracle[(frozenset((i1, i2)), fp)]
    acceptance("structure invariants", not any(problems.values()),
               "violations " + ", ".join(f"{k}={problems[k]}" for k in
                                         ("round trip", "xor involution", "reachability", "multiset oracle"))
               + " over 500 round trips and 1000 randomized tables (want 0)")


def _non_increasing(xs):
    return all(b <= a for a, b in zip(xs, xs[1:]))


def test_epsilon_utility_trend(acceptance):
    epsilons, ms = [2, 4, 6, 8, 10], [1, 3, 5]
    records = _run({"run": {"seed": 11, "n_words": 100, "n_clients": 20, "synthetic": True, "query_s_t": 0.8,
                            "methods": ["ppcf"], "repeats": 5, "deterministic": True, "plots": False},
                    "grid": {"epsilon": epsilons, "m": ms},
                    "ppcf": {"l": 20, "B": 32, "s_t": 0.8, "t_cap": 256}})
    errs = {}
    for r in records:
        errs.setdefault((r.epsilon, r.m), []).append(r.abs_error)
    med = {k: float(np.median(v)) for k, v in errs.items()}
    by_eps = {m: [med[(float(e), m)] for e in epsilons] for m in ms}
    by_m = {e: [med[(float(e), m)] for m in ms] for e in epsilons}
    eps_ok = all(_non_increasing(v) for v in by_eps.values())
    m_ok = all(_non_increasing(v) for v in by_m.values())
    acceptance("utility trend", eps_ok and m_ok,
               f"5 seeds; non-increasing in eps: {eps_ok} {by_eps}; non-increasing in m: {m_ok} {by_m}")
