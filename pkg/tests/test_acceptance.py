"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines.

The heavy randomized batch behind criteria 3, 5 and 6 runs once per session.
Structural checking after every single apply works by induction: an apply can
only change the parent edges of the op's node and of a compensated node, so
walking those nodes' paths to the root re-establishes single-parent,
acyclicity and connectivity against the previously valid state; the full
structural validation additionally re-runs on every final state.
"""
from __future__ import annotations

import random
import socket
import time

import pytest

from movetree.bench import bench_apply_time, bench_conflicts
from movetree.netsim import (
    SimConfig,
    exhaustive_interleavings,
    geo_latency,
    random_workload,
    run_scenario,
)
from movetree.peer import PeerClient, PeerDaemon
from movetree.scenarios import load_scenario
from movetree.tree import ROOT

from conftest import lww_fold

FIG1_EXPECTED = b"[[0,0,0,0],[1,0,0,0],[2,0,0,0],[3,4,6,0],[4,0,8,1],[5,0,3,0],[6,0,4,0],[7,0,6,1]]"
EXP2_EXPECTED = b"[[0,0,0,0],[1,0,0,0],[2,0,0,0],[3,8,10,0],[4,3,2,0],[5,0,3,0],[6,5,11,1],[7,6,8,0],[8,7,9,0]]"


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def invariant_batch():
    """1,000 seeded schedules (3 replicas x 200 ops, reordering on), instrumented.

    Every apply runs the inductive structural check; every remote outcome is
    audited for the compensation budget and the safety of the chosen target.
    """
    totals = {
        "runs": 0,
        "applies": 0,
        "invariant_violations": 0,
        "budget_mismatches": 0,
        "unsafe_targets": 0,
        "cycles": 0,
        "compensations": 0,
        "diverged": 0,
        "elapsed": 0.0,
    }
    started = time.perf_counter()
    for seed in range(1000):
        cfg = SimConfig(
            replicas=3,
            seed=seed,
            reorder=True,
            jitter=60.0,
            latency=geo_latency(3),
        )
        script = random_workload(cfg, 60, 200, rate=500)
        try:
            report = run_scenario(cfg, script, invariant_check=True, collect_outcomes=True)
        except Exception:
            totals["invariant_violations"] += 1
            continue
        totals["runs"] += 1
        totals["applies"] += report.events_processed
        if not report.converged:
            totals["diverged"] += 1
        for _, _, _, out in report.outcomes:
            has_comp = out.compensation is not None
            if has_comp != out.cycle_detected:
                totals["budget_mismatches"] += 1
            if out.cycle_detected:
                totals["cycles"] += 1
                totals["compensations"] += 1 if has_comp else 0
                if out.undo_parent in out.rejected_parents:
                    totals["unsafe_targets"] += 1
    totals["elapsed"] = time.perf_counter() - started
    return totals


def test_criterion_1_working_example_replay():
    started = time.perf_counter()
    cfg, events = load_scenario("fig1")
    report = run_scenario(cfg, events, invariant_check=True)
    elapsed = time.perf_counter() - started
    ok = (
        report.converged
        and report.serialized[0] == FIG1_EXPECTED
        and report.serialized[1] == FIG1_EXPECTED
        and elapsed < 1.0
    )
    nodes = report.final_nodes(0)
    detail = (
        f"crossing moves converge with b under root at {nodes[4][1]} and a under b; "
        f"exact-state match on both replicas in {elapsed * 1000:.0f} ms"
    )
    _verdict(1, ok, detail)


def test_criterion_2_deep_cycle_replay():
    started = time.perf_counter()
    cfg, events = load_scenario("exp2")
    report = run_scenario(cfg, events, invariant_check=True, collect_outcomes=True)
    elapsed = time.perf_counter() - started
    cycles = [out for _, _, _, out in report.outcomes if out.cycle_detected]
    handling_ok = len(cycles) == 2 and all(
        out.undo_node == 6  # y: highest timestamp on the a..x path
        and out.rejected_parents == [4, 7]  # n, z rejected
        and out.undo_parent == 5  # c chosen
        and out.applied  # then a applied under x
        for out in cycles
    )
    ok = (
        report.converged
        and handling_ok
        and report.serialized[0] == EXP2_EXPECTED
        and report.serialized[1] == EXP2_EXPECTED
        and elapsed < 1.0
    )
    _verdict(
        2,
        ok,
        "undo node y, unsafe parents n/z rejected, y moved under c, a applied under x; "
        f"exact-state match in {elapsed * 1000:.0f} ms",
    )


def test_criterion_3_structural_invariants(invariant_batch):
    ok = (
        invariant_batch["runs"] == 1000
        and invariant_batch["invariant_violations"] == 0
        and invariant_batch["elapsed"] < 120.0
    )
    _verdict(
        3,
        ok,
        f"{invariant_batch['runs']} schedules, {invariant_batch['applies']} applies, "
        f"{invariant_batch['invariant_violations']} structural violations "
        f"in {invariant_batch['elapsed']:.1f} s",
    )


def test_criterion_4_convergence():
    started = time.perf_counter()
    rng = random.Random("acceptance:exhaustive")
    non_singleton = 0
    for _ in range(500):
        size = rng.randrange(3, 7)
        ids = list(range(3, 3 + size))
        pool = [ROOT]
        builds = []
        for node_id in ids:
            builds.append((node_id, rng.choice(pool)))
            pool.append(node_id)
        ops_a = [(rng.choice(ids), rng.choice(pool)) for _ in range(rng.randint(1, 3))]
        ops_b = [(rng.choice(ids), rng.choice(pool)) for _ in range(rng.randint(1, 3))]
        if len(exhaustive_interleavings(builds, ops_a, ops_b)) != 1:
            non_singleton += 1

    diverged = 0
    for trial in range(1000):
        replicas = 3 + (trial % 2)
        cfg = SimConfig(
            replicas=replicas,
            seed=10_000 + trial,
            reorder=True,
            jitter=60.0,
            latency=geo_latency(replicas),
        )
        script = random_workload(cfg, 50, 60, rate=500)
        report = run_scenario(cfg, script)
        if not report.converged:
            diverged += 1
    elapsed = time.perf_counter() - started
    ok = non_singleton == 0 and diverged == 0 and elapsed < 300.0
    _verdict(
        4,
        ok,
        f"500 exhaustive instances all singleton ({non_singleton} failures); "
        f"1000 randomized 3-4 replica schedules all converged ({diverged} divergences) "
        f"in {elapsed:.1f} s",
    )


def test_criterion_5_compensation_budget(invariant_batch):
    ok = (
        invariant_batch["budget_mismatches"] == 0
        and invariant_batch["compensations"] == invariant_batch["cycles"]
        and invariant_batch["cycles"] > 0
    )
    _verdict(
        5,
        ok,
        f"{invariant_batch['cycles']} detected cycles produced exactly "
        f"{invariant_batch['compensations']} compensations; "
        f"{invariant_batch['budget_mismatches']} budget mismatches",
    )


def test_criterion_6_safe_compensation_targets(invariant_batch):
    # The selection-time check is asserted inline inside the remote apply
    # path; __debug__ confirms those asserts were active during the batch.
    ok = __debug__ and invariant_batch["unsafe_targets"] == 0 and invariant_batch["cycles"] > 0
    _verdict(
        6,
        ok,
        f"inline safety assertions active; {invariant_batch['unsafe_targets']} unsafe "
        f"targets across {invariant_batch['cycles']} compensations",
    )


def test_criterion_7_conflicts_shrink_with_tree_size():
    started = time.perf_counter()
    sizes = [100, 250, 500]
    rows = bench_conflicts(
        sizes, ops_per_replica=500, rate=500, replicas=3, seeds=5, seed=0,
        algorithms=("proposed",),
    )
    means = []
    for size in sizes:
        counts = [row["conflict_count"] for row in rows if row["tree_size"] == size]
        means.append(sum(counts) / len(counts))
    elapsed = time.perf_counter() - started
    decreasing = all(means[i] > means[i + 1] for i in range(len(means) - 1))
    ok = decreasing and elapsed < 180.0
    _verdict(
        7,
        ok,
        "mean compensations strictly decrease over sizes 100/250/500: "
        + " > ".join(f"{m:.1f}" for m in means)
        + f" ({elapsed:.1f} s)",
    )


def test_criterion_8_apply_time_trend():
    started = time.perf_counter()
    rates = [250, 1000, 2000]
    rows = bench_apply_time(
        rates, tree_size=500, ops_per_replica=400, replicas=3, trials=5, warmup=2, seed=0
    )
    remote = {
        (row["algorithm"], row["rate"]): row["remote_us"] for row in rows
    }
    proposed = [remote[("proposed", rate)] for rate in rates]
    baseline = [remote[("baseline", rate)] for rate in rates]
    proposed_spread = max(proposed) / min(proposed)
    baseline_growth = baseline[-1] / baseline[0]
    speedup = baseline[-1] / proposed[-1]
    elapsed = time.perf_counter() - started
    ok = proposed_spread < 3.0 and baseline_growth > 3.0 and speedup >= 5.0 and elapsed < 300.0
    _verdict(
        8,
        ok,
        f"proposed remote means {proposed} us (spread {proposed_spread:.2f}x < 3), "
        f"baseline {baseline} us (growth {baseline_growth:.2f}x > 3, "
        f"top-rate speedup {speedup:.1f}x >= 5) in {elapsed:.1f} s",
    )


def test_criterion_9_baseline_differential():
    started = time.perf_counter()
    accepted = 0
    mismatches = 0
    seed = 0
    while accepted < 200 and seed < 2000:
        cfg = SimConfig(replicas=3, seed=20_000 + seed, reorder=True, jitter=60.0)
        seed += 1
        script = random_workload(cfg, 150, 6, rate=500)
        proposed = run_scenario(cfg, script)
        if any(s["compensations"] for s in proposed.per_replica):
            continue
        accepted += 1
        base_cfg = SimConfig(
            replicas=3, seed=cfg.seed, algorithm="baseline", reorder=True, jitter=60.0
        )
        baseline = run_scenario(base_cfg, script)
        digests = set(proposed.digests) | set(baseline.digests)
        if len(digests) != 1:
            mismatches += 1
    elapsed = time.perf_counter() - started
    ok = accepted == 200 and mismatches == 0 and elapsed < 60.0
    _verdict(
        9,
        ok,
        f"{accepted} conflict-free schedules, {mismatches} digest mismatches "
        f"between algorithms in {elapsed:.1f} s",
    )


def test_criterion_10_peer_partition_and_crossing_moves():
    started = time.perf_counter()

    def free_port() -> int:
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            return probe.getsockname()[1]

    def wait_identical(x: PeerDaemon, y: PeerDaemon, timeout: float) -> bool:
        deadline = time.time() + timeout
        while time.time() < deadline:
            if x.replica.snapshot() == y.replica.snapshot():
                return True
            time.sleep(0.05)
        return False

    port_a, port_b = free_port(), free_port()
    a = PeerDaemon(0, ("127.0.0.1", port_a), peers=[("127.0.0.1", port_b)])
    a.start()
    b = None
    try:
        # partition window: the peer is unreachable while 50 ops are issued
        window_start = time.time()
        client_a = PeerClient(a.address)
        assert client_a.insert(3, ROOT)["ok"]
        assert client_a.insert(4, ROOT)["ok"]
        for k in range(48):
            client_a.move(3 + (k % 2), ROOT)
        buffered = len(a._senders[0].queue)
        remaining = 5.0 - (time.time() - window_start)
        if remaining > 0:
            time.sleep(remaining)

        # reconnect: the second daemon comes up and the buffer drains
        b = PeerDaemon(1, ("127.0.0.1", port_b), peers=[("127.0.0.1", port_a)])
        b.start()
        drained = wait_identical(a, b, timeout=10.0)

        # crossing moves across live daemons
        client_b = PeerClient(b.address)
        client_a.move(3, 4)
        client_b.move(4, 3)
        settled = wait_identical(a, b, timeout=10.0)
        snap_a, snap_b = a.replica.snapshot(), b.replica.snapshot()
        client_a.close()
        client_b.close()
    finally:
        a.stop()
        if b is not None:
            b.stop()
    elapsed = time.perf_counter() - started
    ok = buffered >= 50 and drained and settled and snap_a == snap_b and elapsed < 30.0
    _verdict(
        10,
        ok,
        f"{buffered} ops buffered through a 5 s partition, snapshots byte-identical "
        f"after reconnect and crossing moves in {elapsed:.1f} s",
    )


def test_criterion_11_lww_oracle():
    started = time.perf_counter()
    mismatches = 0
    for seed in range(200):
        cfg = SimConfig(replicas=3, seed=30_000 + seed, reorder=True, jitter=60.0)
        script = random_workload(cfg, 40, 40, rate=800)
        report = run_scenario(cfg, script, collect_ops=True)
        expected = lww_fold(report.op_ledger)
        for replica in range(cfg.replicas):
            nodes = report.final_nodes(replica)
            for node_id, (parent, ts) in expected.items():
                if nodes.get(node_id) != (parent, ts):
                    mismatches += 1
    elapsed = time.perf_counter() - started
    ok = mismatches == 0 and elapsed < 120.0
    _verdict(
        11,
        ok,
        f"200 runs, every node's final (parent, ts) equals the brute-force "
        f"max-timestamp fold ({mismatches} mismatches) in {elapsed:.1f} s",
    )
