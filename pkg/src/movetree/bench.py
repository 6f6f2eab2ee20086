"""Benchmark harness: apply-time vs. op rate and conflicts vs. tree size.

Runs seeded simulator trials, discards warm-up runs, and emits plot-ready CSV
rows (optionally rendered straight to figures). The stopwatch wraps only the
apply calls; simulated transport time never enters the numbers. Counts are
reproducible under a fixed seed; only the timing columns vary between runs.
"""
from __future__ import annotations

import csv
import io
import statistics
from pathlib import Path

from .netsim import SimConfig, SimulationError, geo_latency, random_workload, run_scenario

APPLY_TIME_FIELDS = ["algorithm", "rate", "local_us", "remote_us", "compensations_or_undoredo"]
CONFLICT_FIELDS = ["algorithm", "tree_size", "replica", "conflict_count"]

DEFAULT_RATES = [250, 1000, 2000]
DEFAULT_SIZES = [100, 250, 500]
DEFAULT_OPS_PER_REPLICA = 500
DEFAULT_TRIALS = 7
DEFAULT_WARMUP = 2
DEFAULT_JITTER_MS = 60.0


def _conflicts(stats: dict) -> int:
    return stats.get("compensations", stats.get("undo_redo", 0))


def run_trial(
    algorithm: str,
    *,
    rate: float,
    tree_size: int,
    ops_per_replica: int,
    replicas: int = 3,
    seed: int = 0,
    reorder: bool = True,
    jitter: float = DEFAULT_JITTER_MS,
    m: int = 5,
    measure: bool = True,
):
    """One seeded simulator run; returns the SimReport, failing loudly on corruption."""
    cfg = SimConfig(
        replicas=replicas,
        algorithm=algorithm,
        seed=seed,
        latency=geo_latency(replicas),
        reorder=reorder,
        jitter=jitter,
        m=m,
    )
    script = random_workload(cfg, tree_size, ops_per_replica, rate)
    report = run_scenario(cfg, script, measure=measure)
    if not report.converged:
        raise SimulationError(
            f"bench trial diverged: algorithm={algorithm} rate={rate} seed={seed}"
        )
    return report


def bench_apply_time(
    rates: list[float] | None = None,
    *,
    tree_size: int = 500,
    ops_per_replica: int = DEFAULT_OPS_PER_REPLICA,
    replicas: int = 3,
    trials: int = DEFAULT_TRIALS,
    warmup: int = DEFAULT_WARMUP,
    seed: int = 0,
    algorithms: tuple[str, ...] = ("proposed", "baseline"),
    jitter: float = DEFAULT_JITTER_MS,
) -> list[dict]:
    """Sweep op rates for both algorithms; average apply times over kept runs.

    Each point runs `trials` seeded trials, discards the first `warmup` as
    warm-up, then averages the per-replica mean apply times (unweighted over
    replicas) across the kept runs.
    """
    rates = rates if rates is not None else list(DEFAULT_RATES)
    rows = []
    for algorithm in algorithms:
        for rate in rates:
            local, remote, conflicts = [], [], []
            for trial in range(trials):
                report = run_trial(
                    algorithm,
                    rate=rate,
                    tree_size=tree_size,
                    ops_per_replica=ops_per_replica,
                    replicas=replicas,
                    seed=seed + trial,
                    jitter=jitter,
                )
                if trial < warmup:
                    continue
                stats = report.per_replica
                local.append(statistics.fmean(s["local_timing"]["mean_us"] for s in stats))
                remote.append(statistics.fmean(s["remote_timing"]["mean_us"] for s in stats))
                conflicts.append(statistics.fmean(_conflicts(s) for s in stats))
            rows.append(
                {
                    "algorithm": algorithm,
                    "rate": rate,
                    "local_us": round(statistics.fmean(local), 3),
                    "remote_us": round(statistics.fmean(remote), 3),
                    "compensations_or_undoredo": round(statistics.fmean(conflicts), 2),
                }
            )
    return rows


def bench_conflicts(
    tree_sizes: list[int] | None = None,
    *,
    ops_per_replica: int = DEFAULT_OPS_PER_REPLICA,
    rate: float = 500,
    replicas: int = 3,
    seeds: int = 5,
    seed: int = 0,
    algorithms: tuple[str, ...] = ("proposed", "baseline"),
    jitter: float = DEFAULT_JITTER_MS,
) -> list[dict]:
    """Sweep tree sizes and report per-replica conflict counts averaged over seeds."""
    tree_sizes = tree_sizes if tree_sizes is not None else list(DEFAULT_SIZES)
    rows = []
    for algorithm in algorithms:
        for size in tree_sizes:
            totals = [0.0] * replicas
            for k in range(seeds):
                report = run_trial(
                    algorithm,
                    rate=rate,
                    tree_size=size,
                    ops_per_replica=ops_per_replica,
                    replicas=replicas,
                    seed=seed + k,
                    jitter=jitter,
                    measure=False,
                )
                for i, stats in enumerate(report.per_replica):
                    totals[i] += _conflicts(stats)
            for i in range(replicas):
                rows.append(
                    {
                        "algorithm": algorithm,
                        "tree_size": size,
                        "replica": i,
                        "conflict_count": round(totals[i] / seeds, 2),
                    }
                )
    return rows


def rows_to_csv(rows: list[dict], fieldnames: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def rows_to_gnuplot(rows: list[dict], fieldnames: list[str]) -> str:
    """Space-separated columns with a commented header, for gnuplot's `plot`."""
    lines = ["# " + " ".join(fieldnames)]
    for row in rows:
        lines.append(" ".join(str(row[name]) for name in fieldnames))
    return "\n".join(lines) + "\n"


def plot_apply_time(rows: list[dict], path: str | Path) -> Path:
    """Render the two-panel apply-time figure (local / remote) next to the CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for axis, column, title in (
        (axes[0], "local_us", "Local move apply time"),
        (axes[1], "remote_us", "Remote move apply time"),
    ):
        for algorithm in sorted({r["algorithm"] for r in rows}):
            points = sorted((r["rate"], r[column]) for r in rows if r["algorithm"] == algorithm)
            axis.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=algorithm)
        axis.set_xlabel("operations per second")
        axis.set_ylabel("mean apply time (us)")
        axis.set_title(title)
        axis.legend()
        axis.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_conflicts(rows: list[dict], path: str | Path) -> Path:
    """Render per-replica conflict counts against tree size."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axis = plt.subplots(figsize=(6, 4))
    keys = sorted({(r["algorithm"], r["replica"]) for r in rows})
    for algorithm, replica in keys:
        points = sorted(
            (r["tree_size"], r["conflict_count"])
            for r in rows
            if r["algorithm"] == algorithm and r["replica"] == replica
        )
        axis.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            marker="o",
            label=f"{algorithm} r{replica}",
        )
    axis.set_xlabel("tree size (# nodes)")
    axis.set_ylabel("avg conflicts (undo/redo or compensations)")
    axis.legend(fontsize=8)
    axis.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
