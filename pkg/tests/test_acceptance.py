"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE n: PASS|FAIL ...`` line (shown even
when pytest captures output) and then asserts the criterion.
"""
import itertools
import random
import time
from collections import Counter
from dataclasses import replace
from functools import lru_cache

import pytest
from scipy.stats import chi2

from yac.crypto import Hash
from yac.harness import (SWEEP_DELAYS_MS, SWEEP_PEERS, load_scenario, run_sweep,
                         scenario_names, sweep_csv, sweep_grid)
from yac.netsim import run
from yac.order import peer_order
from yac.quorum import detect_reject, supermajority_threshold
from randomized import liveness_config, liveness_problems, safety_config

SAFETY_SIZES = (4, 7, 10)
SAFETY_RUNS = 1000
LIVENESS_RUNS = 500


def announce(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}")


@pytest.fixture(scope="module")
def safety_runs():
    """(n, index, agreement violations, lag violation count) for every safety simulation."""
    t0 = time.monotonic()
    out = []
    for n in SAFETY_SIZES:
        for i in range(SAFETY_RUNS):
            r = run(safety_config(n, i), record_trace=False, check_lag=True)
            agreement = [v for v in r.violations if not v.startswith("round lag")]
            out.append((n, i, agreement, r.counters["lag-violations"]))
    return out, time.monotonic() - t0


def test_1_safety(capsys, safety_runs):
    runs, elapsed = safety_runs
    bad = [(n, i, v) for n, i, v, _ in runs if v]
    ok = not bad and elapsed < 300
    announce(capsys, 1, ok, f"{len(runs)} simulations over n={SAFETY_SIZES}, "
             f"{len(bad)} with diverging commits, {elapsed:.0f}s (limit 300s)")
    assert not bad, bad[:3]
    assert elapsed < 300


def test_2_round_lag(capsys, safety_runs):
    runs, _ = safety_runs
    bad = [(n, i, lag) for n, i, _, lag in runs if lag]
    announce(capsys, 2, not bad, f"{len(runs)} simulations, {len(bad)} with honest round spread > 1 "
             "at a quiescent point")
    assert not bad, bad[:3]


def test_3_liveness(capsys):
    bad = []
    for i in range(LIVENESS_RUNS):
        problems = liveness_problems(run(liveness_config(i), record_trace=False))
        if problems:
            bad.append((i, problems))
    announce(capsys, 3, not bad, f"{LIVENESS_RUNS} runs with healing partitions, {len(bad)} failures")
    assert not bad, bad[:3]


@lru_cache(maxsize=None)
def _no_completion_reaches(counts, missing, n):
    """Brute force: try every way the absent voters could vote (old or fresh hashes)."""
    t = supermajority_threshold(n)
    labels = list(range(len(counts))) + [len(counts) + k for k in range(missing)]
    for fill in itertools.product(labels, repeat=missing):
        tally = Counter(fill)
        for h, c in enumerate(counts):
            tally[h] += c
        if max(tally.values(), default=0) >= t:
            return False
    return True


def test_4_reject_oracle(capsys):
    t0 = time.monotonic()
    checked, mismatches = 0, []
    for n in (4, 5, 6, 7):
        for assignment in itertools.product(range(-1, n), repeat=n):
            buckets = {}
            for peer, h in enumerate(assignment):
                if h >= 0:
                    buckets.setdefault(h, set()).add(peer)
            counts = tuple(sorted(len(v) for v in buckets.values()))
            expect = _no_completion_reaches(counts, n - sum(counts), n)
            if detect_reject(buckets, n) != expect:
                mismatches.append((n, assignment))
            checked += 1
    elapsed = time.monotonic() - t0
    ok = not mismatches and elapsed < 60
    announce(capsys, 4, ok, f"{checked} vote-store configurations for n=4..7, "
             f"{len(mismatches)} mismatches, {elapsed:.0f}s (limit 60s)")
    assert not mismatches, mismatches[:3]
    assert elapsed < 60


def test_5_thresholds(capsys):
    wrong = [f for f in range(21) if supermajority_threshold(3 * f + 1) != 2 * f + 1]
    ok = supermajority_threshold(4) == 3 and not wrong
    announce(capsys, 5, ok, f"threshold(4)={supermajority_threshold(4)}, "
             f"2f+1 mismatches for f in 0..20: {wrong}")
    assert ok


def test_6_bob_partition(capsys):
    r = run(load_scenario("bob-partition"))
    heights = {p.height for p in r.peers}
    tops = {p.top_block_hash for p in r.peers}
    forwards = []
    for line in r.trace:
        _, _, kind, detail = line.split("\t", 3)
        if kind == "forward" and detail.startswith("bob "):
            forwards.append(detail)
    ok = len(heights) == 1 and len(tops) == 1 and len(forwards) == 1
    announce(capsys, 6, ok, f"heights {sorted(heights)}, {len(tops)} distinct top hash(es), "
             f"{len(forwards)} commit forward(s) to bob")
    assert ok


def test_7_vote_delay_sweep(capsys):
    t0 = time.monotonic()
    cells = run_sweep(sweep_grid(load_scenario("sweep-base"), SWEEP_PEERS, SWEEP_DELAYS_MS))
    elapsed = time.monotonic() - t0
    by = {(c.n_peers, c.vote_step_delay_ms): c for c in cells}
    a = by[4, 1].median_throughput >= by[4, 500].median_throughput
    b = by[64, 1].stalled_peers_total > by[64, 500].stalled_peers_total
    rows = {n: [by[n, d].median_throughput for d in SWEEP_DELAYS_MS] for n in SWEEP_PEERS}
    c = all(x >= y for row in rows.values() for x, y in zip(row, row[1:]))
    violations = sum(cell.violations for cell in cells)
    ok = a and b and c and not violations and elapsed < 1800
    announce(capsys, 7, ok,
             f"(a) n=4 {by[4, 1].median_throughput:.2f} >= {by[4, 500].median_throughput:.2f}: {a}; "
             f"(b) n=64 stalled {by[64, 1].stalled_peers_total} > {by[64, 500].stalled_peers_total}: {b}; "
             f"(c) non-increasing rows: {c}; violations {violations}; {elapsed:.0f}s")
    with capsys.disabled():
        print(sweep_csv(cells), end="")
    assert a, rows
    assert b, [(k, v.stalled_peers_total) for k, v in by.items()]
    assert c, rows
    assert not violations
    assert elapsed < 1800


def test_8_permutation_uniformity(capsys):
    rng = random.Random(8)
    peers = list(range(4))
    counts = Counter(peer_order(Hash(rng.randbytes(32)), peers) for _ in range(10_000))
    expected = 10_000 / 24
    stat = sum((counts.get(p, 0) - expected) ** 2 / expected for p in itertools.permutations(peers))
    limit = chi2.ppf(0.999, 23)
    impure = not_bijective = 0
    for _ in range(10_000):
        k = rng.randint(1, 16)
        ids = list(range(k))
        h = Hash(rng.randbytes(32))
        out = peer_order(h, ids)
        impure += out != peer_order(h, list(ids))
        not_bijective += sorted(out) != ids
    ok = stat < limit and len(counts) == 24 and not impure and not not_bijective
    announce(capsys, 8, ok, f"chi-square {stat:.2f} < {limit:.2f} over 24 orders; "
             f"impure {impure}, non-bijective {not_bijective} of 10000")
    assert ok


def test_9_determinism(capsys):
    differing = []
    for name in scenario_names():
        for seed in (1, 2):
            cfg = load_scenario(name).with_seed(seed)
            if run(cfg).trace_text() != run(cfg).trace_text():
                differing.append((name, seed))
    grid = sweep_grid(load_scenario("sweep-base").with_seed(3), (4, 7), (1, 100))
    grid = [replace(g, trials=3, duration_s=2.0) for g in grid]
    csv_a = sweep_csv(run_sweep(grid))
    csv_b = sweep_csv(run_sweep(grid))
    csv_c = sweep_csv(run_sweep(grid, jobs=2))
    same_csv = csv_a == csv_b == csv_c
    ok = not differing and same_csv
    announce(capsys, 9, ok, f"{2 * len(scenario_names())} (scenario, seed) traces, "
             f"{len(differing)} differ; sweep CSV identical across reruns and job counts: {same_csv}")
    assert ok, differing
