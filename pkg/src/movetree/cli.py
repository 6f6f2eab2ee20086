"""Command-line entry point: scenarios, fuzzing, the exhaustive oracle, benches, peers."""
from __future__ import annotations

import argparse
import json
import random
import sys
from pathlib import Path

from . import bench as bench_mod
from .netsim import (
    SimConfig,
    SimulationError,
    exhaustive_interleavings,
    geo_latency,
    random_workload,
    run_scenario,
)
from .peer import PeerDaemon
from .scenarios import bundled_names, load_scenario
from .tree import ROOT


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {text!r}")
    return host, int(port)


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="movetree",
        description="Replicated-tree move operation: simulator, benchmarks, peer daemon.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="deterministic simulator")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)

    run = sim_sub.add_parser("run", help="run a scenario file or bundled scenario")
    run.add_argument("scenario", help=f"path or bundled name ({', '.join(bundled_names())})")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--algo", choices=["proposed", "baseline"], default=None)
    run.add_argument("--m", type=int, default=None, help="previous-parent history bound")
    run.add_argument("--csv", type=Path, default=None, help="write metrics CSV here")
    run.add_argument("--state-out", type=Path, default=None, help="write final state files here")
    run.add_argument("--json", type=Path, default=None, help="write the full report here")

    fuzz = sim_sub.add_parser("fuzz", help="randomized convergence/invariant trials")
    fuzz.add_argument("--trials", type=int, required=True)
    fuzz.add_argument("--replicas", type=int, default=3)
    fuzz.add_argument("--ops", type=int, default=60, help="ops per replica")
    fuzz.add_argument("--tree-size", type=int, default=60)
    fuzz.add_argument("--rate", type=float, default=500)
    fuzz.add_argument("--seed", type=int, default=0)
    fuzz.add_argument("--algo", choices=["proposed", "baseline"], default="proposed")

    exhaustive = sim_sub.add_parser("exhaustive", help="enumerate all delivery interleavings")
    exhaustive.add_argument("--instances", type=int, default=25, help="random tiny instances")
    exhaustive.add_argument("--ops", type=int, default=2, help="ops per replica (max 3)")
    exhaustive.add_argument("--tree-size", type=int, default=5)
    exhaustive.add_argument("--seed", type=int, default=0)

    bench = sub.add_parser("bench", help="benchmark harness")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    apply_time = bench_sub.add_parser("apply-time", help="apply time vs. op rate")
    apply_time.add_argument("--rates", type=_int_list, default=None, help="e.g. 250,1000,2000")
    apply_time.add_argument("--tree-size", type=int, default=500)
    apply_time.add_argument("--ops", type=int, default=bench_mod.DEFAULT_OPS_PER_REPLICA)
    apply_time.add_argument("--replicas", type=int, default=3)
    apply_time.add_argument("--trials", type=int, default=bench_mod.DEFAULT_TRIALS)
    apply_time.add_argument("--warmup", type=int, default=bench_mod.DEFAULT_WARMUP)
    apply_time.add_argument("--seed", type=int, default=0)
    apply_time.add_argument("--out", type=Path, default=None, help="CSV path (default stdout)")
    apply_time.add_argument("--plot", type=Path, default=None, help="also render a PNG figure")
    apply_time.add_argument("--gnuplot", action="store_true", help="space-separated column layout")

    conflicts = bench_sub.add_parser("conflicts", help="conflicts vs. tree size")
    conflicts.add_argument("--sizes", type=_int_list, default=None, help="e.g. 100,250,500")
    conflicts.add_argument("--ops", type=int, default=bench_mod.DEFAULT_OPS_PER_REPLICA)
    conflicts.add_argument("--rate", type=float, default=500)
    conflicts.add_argument("--replicas", type=int, default=3)
    conflicts.add_argument("--seeds", type=int, default=5)
    conflicts.add_argument("--seed", type=int, default=0)
    conflicts.add_argument("--out", type=Path, default=None)
    conflicts.add_argument("--plot", type=Path, default=None)
    conflicts.add_argument("--gnuplot", action="store_true", help="space-separated column layout")

    peer = sub.add_parser("peer", help="replica daemon")
    peer_sub = peer.add_subparsers(dest="peer_command", required=True)
    serve = peer_sub.add_parser("serve", help="run one replica daemon")
    serve.add_argument("--id", type=int, required=True)
    serve.add_argument("--listen", type=_parse_addr, required=True)
    serve.add_argument("--peer", type=_parse_addr, action="append", default=[])
    serve.add_argument("--m", type=int, default=5)
    serve.add_argument("--state-digest-interval", type=float, default=0.0)

    verify = sub.add_parser("verify", help="check that final-state files are identical")
    verify.add_argument("files", nargs="+", type=Path)

    return parser


def _cmd_sim_run(args) -> int:
    cfg, events = load_scenario(args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.algo is not None:
        cfg.algorithm = args.algo
    if args.m is not None:
        cfg.m = args.m
    report = run_scenario(cfg, events, measure=True, invariant_check=True)
    print(f"scenario: {args.scenario}  algorithm: {cfg.algorithm}  seed: {cfg.seed}")
    print(f"events processed: {report.events_processed}  quiesced at: {report.end_time:.1f} ms")
    for i, stats in enumerate(report.per_replica):
        line = "  ".join(f"{k}={v}" for k, v in stats.items() if not k.endswith("_timing"))
        print(f"replica {i}: {line}")
    print(f"converged: {report.converged}")
    for i, digest in enumerate(report.digests):
        print(f"digest r{i}: {digest}")
    if args.csv is not None:
        rows = report.metrics_rows()
        args.csv.write_text(
            bench_mod.rows_to_csv(rows, ["replica", "op_kind", "count", "mean_us", "p99_us", "compensations"])
        )
        print(f"metrics: {args.csv}")
    if args.state_out is not None:
        args.state_out.mkdir(parents=True, exist_ok=True)
        for i, blob in enumerate(report.serialized):
            path = args.state_out / f"state-r{i}.json"
            path.write_bytes(blob)
            print(f"state: {path}")
    if args.json is not None:
        doc = {
            "algorithm": report.algorithm,
            "seed": report.seed,
            "converged": report.converged,
            "digests": report.digests,
            "per_replica": report.per_replica,
            "events_processed": report.events_processed,
            "end_time_ms": report.end_time,
        }
        args.json.write_text(json.dumps(doc, indent=2))
    return 0 if report.converged else 1


def _cmd_sim_fuzz(args) -> int:
    failures = 0
    for trial in range(args.trials):
        cfg = SimConfig(
            replicas=args.replicas,
            algorithm=args.algo,
            seed=args.seed + trial,
            latency=geo_latency(args.replicas),
            reorder=True,
            jitter=60.0,
        )
        script = random_workload(cfg, args.tree_size, args.ops, args.rate)
        try:
            report = run_scenario(cfg, script, invariant_check=True)
        except SimulationError as exc:
            print(f"trial {trial} (seed {cfg.seed}): ERROR {exc}")
            failures += 1
            continue
        if not report.converged:
            print(f"trial {trial} (seed {cfg.seed}): DIVERGED {report.digests}")
            failures += 1
    print(f"fuzz: {args.trials - failures}/{args.trials} trials converged with invariants intact")
    return 0 if failures == 0 else 1


def _cmd_sim_exhaustive(args) -> int:
    if not 1 <= args.ops <= 3:
        print("--ops must be between 1 and 3", file=sys.stderr)
        return 2
    # The crossing-moves instance: two siblings moved under each other.
    digests = exhaustive_interleavings([(3, ROOT), (4, ROOT)], [(3, 4)], [(4, 3)])
    results = [("crossing-moves", digests)]
    rng = random.Random(f"exhaustive:{args.seed}")
    first_user = 3
    ids = list(range(first_user, first_user + args.tree_size))
    for k in range(args.instances):
        builds = []
        pool = [ROOT]
        for node_id in ids:
            builds.append((node_id, rng.choice(pool)))
            pool.append(node_id)
        ops_a = [(rng.choice(ids), rng.choice(pool)) for _ in range(args.ops)]
        ops_b = [(rng.choice(ids), rng.choice(pool)) for _ in range(args.ops)]
        results.append((f"random-{k}", exhaustive_interleavings(builds, ops_a, ops_b)))
    bad = 0
    for name, digests in results:
        if len(digests) != 1:
            print(f"{name}: NOT CONVERGENT ({len(digests)} digests)")
            bad += 1
    print(f"exhaustive: {len(results) - bad}/{len(results)} instances converged to a single digest")
    return 0 if bad == 0 else 1


def _write_rows(rows, fields, out: Path | None, gnuplot: bool = False) -> None:
    if gnuplot:
        text = bench_mod.rows_to_gnuplot(rows, fields)
    else:
        text = bench_mod.rows_to_csv(rows, fields)
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        print(f"table: {out}")


def _cmd_bench_apply_time(args) -> int:
    rows = bench_mod.bench_apply_time(
        args.rates,
        tree_size=args.tree_size,
        ops_per_replica=args.ops,
        replicas=args.replicas,
        trials=args.trials,
        warmup=args.warmup,
        seed=args.seed,
    )
    _write_rows(rows, bench_mod.APPLY_TIME_FIELDS, args.out, args.gnuplot)
    if args.plot is not None:
        print(f"figure: {bench_mod.plot_apply_time(rows, args.plot)}")
    return 0


def _cmd_bench_conflicts(args) -> int:
    rows = bench_mod.bench_conflicts(
        args.sizes,
        ops_per_replica=args.ops,
        rate=args.rate,
        replicas=args.replicas,
        seeds=args.seeds,
        seed=args.seed,
    )
    _write_rows(rows, bench_mod.CONFLICT_FIELDS, args.out, args.gnuplot)
    if args.plot is not None:
        print(f"figure: {bench_mod.plot_conflicts(rows, args.plot)}")
    return 0


def _cmd_peer_serve(args) -> int:
    daemon = PeerDaemon(
        args.id,
        args.listen,
        args.peer,
        m=args.m,
        digest_interval=args.state_digest_interval,
    )
    daemon.start()
    print(f"replica {args.id} serving on {daemon.address}; peers: {args.peer}")
    daemon.run_forever()
    return 0


def _cmd_verify(args) -> int:
    blobs = [(path, path.read_bytes()) for path in args.files]
    reference = blobs[0][1]
    mismatched = [str(path) for path, blob in blobs[1:] if blob != reference]
    if mismatched:
        print(f"MISMATCH against {blobs[0][0]}: {', '.join(mismatched)}")
        return 1
    print(f"identical: {len(blobs)} state file(s)")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sim":
            if args.sim_command == "run":
                return _cmd_sim_run(args)
            if args.sim_command == "fuzz":
                return _cmd_sim_fuzz(args)
            if args.sim_command == "exhaustive":
                return _cmd_sim_exhaustive(args)
        if args.command == "bench":
            if args.bench_command == "apply-time":
                return _cmd_bench_apply_time(args)
            if args.bench_command == "conflicts":
                return _cmd_bench_conflicts(args)
        if args.command == "peer":
            return _cmd_peer_serve(args)
        if args.command == "verify":
            return _cmd_verify(args)
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
