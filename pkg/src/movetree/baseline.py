"""Undo-redo baseline: a totally ordered move log replayed on out-of-order arrival.

On receiving a remote move, every already-applied op with a higher timestamp
is undone, the new op is inserted at its sorted position and applied if safe,
and the undone ops are redone in timestamp order with safety re-evaluated.
The final state is a pure function of the op multiset, which makes this the
convergence and performance comparison target for the move algorithm.
"""
from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass

from .clock import LamportClock, Timestamp, ZERO_TS
from .movecrdt import MoveOp
from .tree import SENTINELS, TRASH, NodeId, TreeState


@dataclass(slots=True)
class LogEntry:
    op: MoveOp
    old_parent: NodeId | None  # None: the op created the node (undo removes it)
    old_ts: Timestamp
    applied: bool


class BaselineReplica:
    """Replica running the sorted-log undo-redo algorithm."""

    def __init__(self, replica_id: int, m: int = 0) -> None:
        # m is accepted for interface parity with Replica; the log is unbounded.
        self.id = replica_id
        self.clock = LamportClock(replica_id)
        self.state = TreeState()
        self.log: list[LogEntry] = []
        self._ts_index: list[Timestamp] = []  # parallel sort keys for bisect
        self.outbox: list[MoveOp] = []
        self._lock = threading.Lock()
        self.ops_generated = 0
        self.ops_received = 0
        self.stale_ignored = 0  # duplicate deliveries
        self.undo_redo_count = 0

    def apply_local(self, n: NodeId, p: NodeId) -> MoveOp:
        """Issue a local move: tick, record a log entry (applied iff safe), return the op."""
        with self._lock:
            if p not in self.state.nodes:
                raise ValueError(f"parent {p} does not exist at replica {self.id}")
            ts = self.clock.tick()
            op = MoveOp(ts, n, p)
            entry = self._try_apply(op)
            idx = bisect.bisect_left(self._ts_index, ts)
            self.log.insert(idx, entry)
            self._ts_index.insert(idx, ts)
            self.outbox.append(op)
            self.ops_generated += 1
            return op

    def delete(self, n: NodeId) -> MoveOp:
        return self.apply_local(n, TRASH)

    def submit(self, n: NodeId, p: NodeId):
        """Interface parity with Replica.submit; the log handles unsafe ops itself."""
        op = self.apply_local(n, p)
        return op, True, None

    def apply_remote(self, op: MoveOp) -> int:
        """Undo newer entries, insert and apply op, redo the rest; return steps performed.

        The step count is the number of log entries visited in the undo pass
        plus the redo pass. Duplicate timestamps are ignored (idempotence).
        """
        with self._lock:
            self.ops_received += 1
            self.clock.witness(op.ts)
            idx = bisect.bisect_left(self._ts_index, op.ts)
            if idx < len(self._ts_index) and self._ts_index[idx] == op.ts:
                self.stale_ignored += 1
                return 0
            newer = self.log[idx:]
            for entry in reversed(newer):
                self._undo(entry)
            entry = self._try_apply(op)
            self.log.insert(idx, entry)
            self._ts_index.insert(idx, op.ts)
            for redo in newer:
                self._reapply(redo)
            steps = 2 * len(newer)
            self.undo_redo_count += steps
            return steps

    def _is_safe(self, op: MoveOp) -> bool:
        # Safe: n movable, p present, and the move does not put n above itself.
        if op.n in SENTINELS:
            return False
        if op.p not in self.state.nodes:
            return False
        return not self.state.check_cycle(op.n, op.p)

    def _try_apply(self, op: MoveOp) -> LogEntry:
        if not self._is_safe(op):
            return LogEntry(op, None, ZERO_TS, applied=False)
        node = self.state.nodes.get(op.n)
        if node is None:
            self.state.add_node(op.n, op.p, op.ts)
            return LogEntry(op, None, ZERO_TS, applied=True)
        entry = LogEntry(op, node.parent, node.ts, applied=True)
        node.parent = op.p
        node.ts = op.ts
        return entry

    def _reapply(self, entry: LogEntry) -> None:
        """Redo in place: safety is re-evaluated, captured state refreshed."""
        redone = self._try_apply(entry.op)
        entry.old_parent = redone.old_parent
        entry.old_ts = redone.old_ts
        entry.applied = redone.applied

    def _undo(self, entry: LogEntry) -> None:
        if not entry.applied:
            return
        if entry.old_parent is None:
            del self.state.nodes[entry.op.n]  # the entry created the node
        else:
            node = self.state.nodes[entry.op.n]
            node.parent = entry.old_parent
            node.ts = entry.old_ts

    def drain_outbox(self) -> list[MoveOp]:
        with self._lock:
            drained = self.outbox
            self.outbox = []
            return drained

    def stats(self) -> dict[str, int]:
        return {
            "generated": self.ops_generated,
            "received": self.ops_received,
            "stale_ignored": self.stale_ignored,
            "undo_redo": self.undo_redo_count,
        }

    def rebuild_from_log(self) -> TreeState:
        """Replay the log in timestamp order onto a fresh tree (test oracle)."""
        fresh = BaselineReplica(self.id)
        for entry in self.log:
            replayed = fresh._try_apply(entry.op)
            fresh.log.append(replayed)
        return fresh.state
