"""Deterministic discrete-event simulator for replicas exchanging move ops.

Delivery runs on simulated time (milliseconds) over per-pair latency with
optional seeded jitter/reordering; wall-clock time is measured only around
the apply calls themselves. A fixed (config, script) pair fully determines
every apply order and compensation, so convergence checks are reproducible.
"""
from __future__ import annotations

import heapq
import json
import random
import statistics
import time
from dataclasses import dataclass

from .baseline import BaselineReplica
from .clock import Timestamp
from .movecrdt import MoveOp, RemoteApplyOutcome, Replica
from .tree import ROOT, NodeId

#: Measured latencies (ms) between three geo-distributed regions
#: (US East, West Europe, Southeast Asia).
GEO_LATENCY_MS = [
    [0.0, 41.0, 111.0],
    [41.0, 0.0, 79.0],
    [111.0, 79.0, 0.0],
]

DEFAULT_LATENCY_MS = 41.0


class SimulationError(RuntimeError):
    pass


def uniform_latency(replicas: int, ms: float = DEFAULT_LATENCY_MS) -> list[list[float]]:
    return [[0.0 if i == j else ms for j in range(replicas)] for i in range(replicas)]


def geo_latency(replicas: int) -> list[list[float]]:
    """Tile the measured 3-region latency table out to `replicas` endpoints."""
    matrix = []
    for i in range(replicas):
        row = []
        for j in range(replicas):
            if i == j:
                row.append(0.0)
            else:
                ms = GEO_LATENCY_MS[i % 3][j % 3]
                row.append(ms if ms > 0 else DEFAULT_LATENCY_MS)
        matrix.append(row)
    return matrix


@dataclass
class SimConfig:
    replicas: int
    algorithm: str = "proposed"  # or "baseline"
    seed: int = 0
    latency: list[list[float]] | None = None  # None -> uniform DEFAULT_LATENCY_MS
    reorder: bool = False
    jitter: float = 0.0  # max extra delay (ms) drawn per message when reorder is on
    m: int = 5

    def latency_matrix(self) -> list[list[float]]:
        matrix = self.latency if self.latency is not None else uniform_latency(self.replicas)
        if len(matrix) != self.replicas or any(len(row) != self.replicas for row in matrix):
            raise ValueError("latency matrix shape must be replicas x replicas")
        for i in range(self.replicas):
            if matrix[i][i] != 0:
                raise ValueError("latency matrix diagonal must be zero")
            for j in range(self.replicas):
                if matrix[i][j] != matrix[j][i]:
                    raise ValueError("latency matrix must be symmetric")
        return matrix


@dataclass(frozen=True)
class SimEvent:
    """Scripted timeline entry: a client move generation or an explicit delivery."""

    at: float
    kind: str  # "generate" | "deliver"
    replica: int
    n: NodeId = 0
    p: NodeId = 0
    op: MoveOp | None = None


@dataclass
class SimReport:
    algorithm: str
    replicas: int
    seed: int
    converged: bool
    digests: list[str]
    serialized: list[bytes]
    per_replica: list[dict]
    events_processed: int
    end_time: float
    op_ledger: list[MoveOp] | None = None
    outcomes: list[tuple[float, int, MoveOp, RemoteApplyOutcome]] | None = None

    def final_nodes(self, replica: int) -> dict[int, tuple[int, Timestamp]]:
        """Parse one replica's canonical state into id -> (parent, ts)."""
        rows = json.loads(self.serialized[replica])
        return {r[0]: (r[1], Timestamp(r[2], r[3])) for r in rows}

    def metrics_rows(self) -> list[dict]:
        rows = []
        for i, stats in enumerate(self.per_replica):
            conflicts = stats.get("compensations", stats.get("undo_redo", 0))
            for op_kind in ("local", "remote"):
                timing = stats.get(f"{op_kind}_timing", {})
                rows.append(
                    {
                        "replica": i,
                        "op_kind": op_kind,
                        "count": timing.get("count", stats.get("generated" if op_kind == "local" else "received", 0)),
                        "mean_us": timing.get("mean_us", ""),
                        "p99_us": timing.get("p99_us", ""),
                        "compensations": conflicts,
                    }
                )
        return rows


def _timing_summary(samples_ns: list[int]) -> dict:
    if not samples_ns:
        return {"count": 0, "mean_us": 0.0, "p99_us": 0.0}
    ordered = sorted(samples_ns)
    p99 = ordered[min(len(ordered) - 1, int(0.99 * (len(ordered) - 1)))]
    return {
        "count": len(samples_ns),
        "mean_us": statistics.fmean(samples_ns) / 1000.0,
        "p99_us": p99 / 1000.0,
    }


def _new_replicas(cfg: SimConfig):
    if cfg.algorithm == "proposed":
        return [Replica(i, m=cfg.m) for i in range(cfg.replicas)]
    if cfg.algorithm == "baseline":
        return [BaselineReplica(i) for i in range(cfg.replicas)]
    raise ValueError(f"unknown algorithm {cfg.algorithm!r}")


def run_scenario(
    cfg: SimConfig,
    script: list[SimEvent],
    *,
    measure: bool = False,
    collect_ops: bool = False,
    collect_outcomes: bool = False,
    invariant_check: bool = False,
    max_events: int | None = None,
) -> SimReport:
    """Execute a scripted timeline to quiescence and report convergence.

    Every broadcast op (including compensations drained after each apply) is
    scheduled for delivery to all other replicas per the latency matrix, plus
    seeded jitter when reordering is enabled. Quiescence = empty event queue
    and empty outboxes. `invariant_check` walks the changed nodes' root paths
    after every apply, turning any structural violation into a hard error.
    """
    latency = cfg.latency_matrix()
    replicas = _new_replicas(cfg)
    rng = random.Random(f"jitter:{cfg.seed}")
    budget = max_events if max_events is not None else 1000 + 100 * max(1, len(script))

    heap: list[tuple] = []
    seq = 0
    for event in script:
        if event.kind == "generate":
            key3: tuple = (0, 0)
        elif event.kind == "deliver":
            if event.op is None:
                raise ValueError("deliver event requires an op")
            key3 = event.op.ts
        else:
            raise ValueError(f"unknown event kind {event.kind!r}")
        heapq.heappush(heap, (event.at, 0 if event.kind == "generate" else 1, event.replica, key3, seq, event))
        seq += 1

    local_ns: list[list[int]] = [[] for _ in range(cfg.replicas)]
    remote_ns: list[list[int]] = [[] for _ in range(cfg.replicas)]
    ledger: list[MoveOp] = []
    outcomes: list[tuple[float, int, MoveOp, RemoteApplyOutcome]] = []
    events_processed = 0
    now = 0.0

    def schedule_broadcast(sender: int, at: float) -> None:
        nonlocal seq
        for op in replicas[sender].drain_outbox():
            if collect_ops:
                ledger.append(op)
            for peer in range(cfg.replicas):
                if peer == sender:
                    continue
                delay = latency[sender][peer]
                if cfg.reorder and cfg.jitter > 0:
                    delay += rng.uniform(0.0, cfg.jitter)
                event = SimEvent(at + delay, "deliver", peer, op=op)
                heapq.heappush(heap, (event.at, 1, peer, op.ts, seq, event))
                seq += 1

    while heap:
        events_processed += 1
        if events_processed > budget:
            raise SimulationError(
                f"no quiescence after {budget} events (compensation storm?)"
            )
        now, _, _, _, _, event = heapq.heappop(heap)
        replica = replicas[event.replica]
        if event.kind == "generate":
            if measure:
                t0 = time.perf_counter_ns()
                op, _, self_outcome = replica.submit(event.n, event.p)
                local_ns[event.replica].append(time.perf_counter_ns() - t0)
            else:
                op, _, self_outcome = replica.submit(event.n, event.p)
            if self_outcome is not None and collect_outcomes:
                outcomes.append((now, event.replica, op, self_outcome))
            if invariant_check:
                _check_after_apply(replica, event.n, self_outcome)
        else:
            op = event.op
            if measure:
                t0 = time.perf_counter_ns()
                result = replica.apply_remote(op)
                remote_ns[event.replica].append(time.perf_counter_ns() - t0)
            else:
                result = replica.apply_remote(op)
            if isinstance(result, RemoteApplyOutcome):
                if collect_outcomes:
                    outcomes.append((now, event.replica, op, result))
                if invariant_check:
                    _check_after_apply(replica, op.n, result)
            elif invariant_check:
                _check_after_apply(replica, op.n)
        schedule_broadcast(event.replica, now)

    for replica in replicas:
        if replica.outbox:
            raise SimulationError("outbox not empty at quiescence")
        replica.state.validate_well_formed()

    serialized = [r.state.serialize() for r in replicas]
    digests = [r.state.digest() for r in replicas]
    per_replica = []
    for i, replica in enumerate(replicas):
        stats = replica.stats()
        if measure:
            stats["local_timing"] = _timing_summary(local_ns[i])
            stats["remote_timing"] = _timing_summary(remote_ns[i])
        per_replica.append(stats)

    return SimReport(
        algorithm=cfg.algorithm,
        replicas=cfg.replicas,
        seed=cfg.seed,
        converged=len(set(digests)) == 1,
        digests=digests,
        serialized=serialized,
        per_replica=per_replica,
        events_processed=events_processed,
        end_time=now,
        op_ledger=ledger if collect_ops else None,
        outcomes=outcomes if collect_outcomes else None,
    )


def _check_after_apply(replica, n: NodeId, outcome: RemoteApplyOutcome | None = None) -> None:
    """Inductive structural check after one apply.

    Only the parent edges of the op's node (and a compensated node) can have
    changed, so verifying those nodes still reach ROOT re-establishes
    acyclicity and connectivity for the whole state; single-parent holds
    structurally. Walks raise CorruptTreeError on violation.
    """
    state = replica.state
    if n in state.nodes:
        state.path_to_root(n)
    if outcome is not None and outcome.undo_node is not None:
        state.path_to_root(outcome.undo_node)


# -- workload generation -----------------------------------------------------


def random_workload(
    cfg: SimConfig,
    tree_size: int,
    ops_per_replica: int,
    rate: float,
) -> list[SimEvent]:
    """Seeded timeline: build tree_size nodes, then uniform random moves at `rate`.

    Replica 0 inserts the initial nodes at t=0 (a random recursive tree:
    each parent drawn uniformly from the nodes inserted so far). Move
    generation starts after the build has propagated; each replica issues
    ops_per_replica moves at the given per-replica rate, picking the moved
    node and the new parent uniformly at random.
    """
    if tree_size < 1:
        raise ValueError("tree_size must be >= 1")
    rng = random.Random(f"workload:{cfg.seed}")
    events: list[SimEvent] = []
    first_user = 3
    ids = list(range(first_user, first_user + tree_size))
    inserted: list[NodeId] = [ROOT]
    for node_id in ids:
        parent = rng.choice(inserted)
        events.append(SimEvent(0.0, "generate", 0, n=node_id, p=parent))
        inserted.append(node_id)

    max_latency = max(max(row) for row in cfg.latency_matrix())
    start = max_latency + cfg.jitter + 10.0
    interval = 1000.0 / rate
    parent_pool = [ROOT] + ids
    for k in range(ops_per_replica):
        at = start + k * interval
        for replica in range(cfg.replicas):
            n = rng.choice(ids)
            p = rng.choice(parent_pool)
            events.append(SimEvent(at, "generate", replica, n=n, p=p))
    return events


# -- exhaustive interleaving oracle -------------------------------------------


def _fingerprint(replica: Replica) -> tuple:
    log = tuple(sorted((k, tuple(v)) for k, v in replica.present_log.entries.items() if v))
    return (replica.state.serialize(), replica.clock.lc_time, log)


def exhaustive_interleavings(
    builds: list[tuple[NodeId, NodeId]],
    ops_a: list[tuple[NodeId, NodeId]],
    ops_b: list[tuple[NodeId, NodeId]],
    *,
    m: int = 5,
    max_configs: int = 500_000,
) -> set[str]:
    """Enumerate every interleaving of channel deliveries for a tiny 2-replica instance.

    Both replicas start from the same built tree; each then issues its local
    ops concurrently. Broadcasts (compensations included) travel over one
    FIFO channel per direction, and every interleaving of the two channels'
    delivery steps is explored. Returns the set of final digests over all
    terminal interleavings; convergence holds iff it is a singleton.

    Channel FIFO matters: whether a replica detects a cycle (and therefore
    emits a compensation at all) depends on whether the conflicting op or the
    other side's compensation arrives first, so only the per-channel send
    order makes the reachable final state unique. Cross-channel reordering is
    covered by the randomized scheduler runs instead, where convergence is
    checked within each run.
    """
    if len(ops_a) > 3 or len(ops_b) > 3:
        raise ValueError("exhaustive oracle is bounded to <=3 ops per replica")
    base_a, base_b = Replica(0, m=m), Replica(1, m=m)
    for n, p in builds:
        base_a.submit(n, p)
    for op in base_a.drain_outbox():
        base_b.apply_remote(op)
    base_b.drain_outbox()

    for n, p in ops_a:
        base_a.submit(n, p)
    chan_b = tuple(base_a.drain_outbox())  # in flight towards B, FIFO
    for n, p in ops_b:
        base_b.submit(n, p)
    chan_a = tuple(base_b.drain_outbox())  # in flight towards A, FIFO

    digests: set[str] = set()
    seen: set[tuple] = set()
    configs = 0

    stack = [(base_a, base_b, chan_a, chan_b)]
    while stack:
        rep_a, rep_b, ca, cb = stack.pop()
        key = (_fingerprint(rep_a), _fingerprint(rep_b), ca, cb)
        if key in seen:
            continue
        seen.add(key)
        configs += 1
        if configs > max_configs:
            raise SimulationError("interleaving explosion guard tripped")
        if not ca and not cb:
            digests.add(rep_a.state.digest())
            digests.add(rep_b.state.digest())
            continue
        if ca:
            nxt = rep_a.clone()
            nxt.apply_remote(ca[0])
            extra = tuple(nxt.drain_outbox())
            stack.append((nxt, rep_b.clone(), ca[1:], cb + extra))
        if cb:
            nxt = rep_b.clone()
            nxt.apply_remote(cb[0])
            extra = tuple(nxt.drain_outbox())
            stack.append((rep_a.clone(), nxt, ca + extra, cb[1:]))
    return digests


# -- scenario files ------------------------------------------------------------


def parse_scenario(text: str) -> tuple[SimConfig, list[SimEvent]]:
    """Parse the line-oriented scenario format.

    Directives: `replicas N`, `seed N`, `m N`, `reorder on|off`, `jitter MS`,
    `latency default MS`, `latency pair I J MS`, then one event per line:
    `gen T REPLICA N P` or `deliver T REPLICA COUNTER OP_REPLICA N P`.
    `#` starts a comment.
    """
    replicas = 2
    seed = 0
    m = 5
    reorder = False
    jitter = 0.0
    default_ms = DEFAULT_LATENCY_MS
    pairs: list[tuple[int, int, float]] = []
    events: list[SimEvent] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        word = parts[0]
        try:
            if word == "replicas":
                replicas = int(parts[1])
            elif word == "seed":
                seed = int(parts[1])
            elif word == "m":
                m = int(parts[1])
            elif word == "reorder":
                reorder = parts[1] in ("on", "true", "1")
            elif word == "jitter":
                jitter = float(parts[1])
            elif word == "latency":
                if parts[1] == "default":
                    default_ms = float(parts[2])
                elif parts[1] == "pair":
                    pairs.append((int(parts[2]), int(parts[3]), float(parts[4])))
                else:
                    raise ValueError("expected 'latency default MS' or 'latency pair I J MS'")
            elif word == "gen":
                events.append(
                    SimEvent(float(parts[1]), "generate", int(parts[2]), n=int(parts[3]), p=int(parts[4]))
                )
            elif word == "deliver":
                op = MoveOp(Timestamp(int(parts[3]), int(parts[4])), int(parts[5]), int(parts[6]))
                events.append(SimEvent(float(parts[1]), "deliver", int(parts[2]), op=op))
            else:
                raise ValueError(f"unknown directive {word!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"scenario line {lineno}: {exc}") from exc

    latency = uniform_latency(replicas, default_ms)
    for i, j, ms in pairs:
        latency[i][j] = ms
        latency[j][i] = ms
    cfg = SimConfig(replicas=replicas, seed=seed, latency=latency, reorder=reorder, jitter=jitter, m=m)
    return cfg, events
