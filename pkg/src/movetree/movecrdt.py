"""Coordination-free replicated move operation.

Every mutation of the tree is a move<ts, n, p>: insert is a move of a
never-seen node, delete is a move under TRASH. Concurrent moves are resolved
last-write-wins on globally unique Lamport timestamps; a remote move that
would form a cycle triggers exactly one compensation move that relocates the
newest node of the cycle to a safe previous parent taken from a bounded
per-node history, falling back to the immovable CONFLICT node.
"""
from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .clock import LamportClock, Timestamp, ZERO_TS
from .tree import CONFLICT, SENTINELS, TRASH, NodeId, TreeState

log = logging.getLogger(__name__)

DEFAULT_LOG_BOUND = 5


class MoveOp(NamedTuple):
    """The single replicated operation: reparent node n under p at time ts."""

    ts: Timestamp
    n: NodeId
    p: NodeId


class PresentLog:
    """Per-node history of previous parents: most-recent first, unique, bounded to m.

    Re-recording a parent already present moves it to the front; exceeding the
    bound evicts the oldest entry.
    """

    __slots__ = ("m", "entries")

    def __init__(self, m: int = DEFAULT_LOG_BOUND) -> None:
        if m < 1:
            raise ValueError("present-log bound must be >= 1")
        self.m = m
        self.entries: dict[NodeId, deque[NodeId]] = {}

    def record(self, node: NodeId, parent: NodeId) -> None:
        parents = self.entries.get(node)
        if parents is None:
            self.entries[node] = deque([parent], maxlen=self.m)
            return
        try:
            parents.remove(parent)
        except ValueError:
            pass
        parents.appendleft(parent)  # maxlen evicts the oldest automatically

    def pop(self, node: NodeId) -> NodeId | None:
        """Remove and return the most recent previous parent, or None if exhausted."""
        parents = self.entries.get(node)
        if not parents:
            return None
        return parents.popleft()

    def peek(self, node: NodeId) -> list[NodeId]:
        return list(self.entries.get(node, ()))


@dataclass
class RemoteApplyOutcome:
    """Observable result of applying one remote move, for metrics and tests."""

    applied: bool = False
    stale_ignored: bool = False
    rejected_malformed: bool = False
    cycle_detected: bool = False
    compensation: MoveOp | None = None
    undo_node: NodeId | None = None
    undo_parent: NodeId | None = None
    rejected_parents: list[NodeId] = field(default_factory=list)
    created_missing_parent: bool = False


def find_last(state: TreeState, n: NodeId, p: NodeId) -> NodeId:
    """Return the node with the highest timestamp on the cycle path from p up to n.

    Precondition: n is an ancestor of p (a cycle was detected for move(n, p)).
    """
    nodes = state.nodes
    undo_node = n
    max_ts = nodes[n].ts
    cur = p
    steps = len(nodes) + 1
    while cur != n:
        record = nodes[cur]
        if record.ts > max_ts:
            undo_node = cur
            max_ts = record.ts
        cur = record.parent
        steps -= 1
        if steps < 0:
            raise AssertionError(f"find_last({n}, {p}) called without a cycle")
    return undo_node


class Replica:
    """One replica: clock + tree + previous-parent history + outgoing op queue.

    A single lock guards clock, state, present_log and outbox; local
    generation and every remote-receiver context apply exactly one operation
    at a time under it.
    """

    def __init__(self, replica_id: int, m: int = DEFAULT_LOG_BOUND) -> None:
        self.id = replica_id
        self.clock = LamportClock(replica_id)
        self.state = TreeState()
        self.present_log = PresentLog(m)
        self.outbox: list[MoveOp] = []
        self._lock = threading.Lock()
        # counters for reports
        self.ops_generated = 0
        self.ops_received = 0
        self.stale_ignored = 0
        self.compensations = 0
        self.local_skips = 0
        self.self_resolved = 0

    # -- local path ---------------------------------------------------------

    def apply_local(self, n: NodeId, p: NodeId) -> tuple[MoveOp, bool]:
        """Issue and apply a local move; returns (op, applied).

        The op is always queued for broadcast, even when the local cycle check
        suppressed the state change (applied=False). Rejects sentinel n and
        unknown p: both are caller bugs at the local replica.
        """
        with self._lock:
            self._validate_local(n, p)
            return self._apply_local_inner(n, p)

    def delete(self, n: NodeId) -> tuple[MoveOp, bool]:
        """Soft delete: move n (with its subtree) under TRASH."""
        return self.apply_local(n, TRASH)

    def submit(self, n: NodeId, p: NodeId) -> tuple[MoveOp, bool, RemoteApplyOutcome | None]:
        """Client entry point: apply_local plus self-resolution of a suppressed move.

        A locally-skipped op is still broadcast, so every other replica will
        account for it; running it through the remote path here keeps the
        issuer convergent with them (it compensates its own cycle instead of
        silently dropping the op). Returns (op, applied, self_outcome).
        """
        with self._lock:
            self._validate_local(n, p)
            op, applied = self._apply_local_inner(n, p)
            self.ops_generated += 1
            outcome = None
            if not applied:
                self.local_skips += 1
                outcome = self._apply_remote_inner(op)
                self.self_resolved += 1
            return op, applied, outcome

    def _validate_local(self, n: NodeId, p: NodeId) -> None:
        if n in SENTINELS:
            raise ValueError(f"node {n} is a sentinel and cannot be moved")
        if p not in self.state.nodes:
            raise ValueError(f"parent {p} does not exist at replica {self.id}")

    def _apply_local_inner(self, n: NodeId, p: NodeId) -> tuple[MoveOp, bool]:
        state = self.state
        ts = self.clock.tick()
        op = MoveOp(ts, n, p)
        applied = False
        if not state.check_cycle(n, p):
            node = state.nodes.get(n)
            if node is None:
                state.add_node(n, p, ts)  # insert: no previous parent to record
            else:
                self.present_log.record(n, node.parent)
                node.parent = p
                node.ts = ts
            applied = True
        self.outbox.append(op)  # broadcast unconditionally
        return op, applied

    # -- remote path --------------------------------------------------------

    def apply_remote(self, op: MoveOp) -> RemoteApplyOutcome:
        """Apply one remote move, compensating when it would form a cycle.

        Flow: ignore stale ops (op.ts <= node ts); stamp the node with the op
        timestamp; absorb the timestamp into the clock; record the current
        parent in the present log; if n is an ancestor of p, move the
        newest node on the cycle path back to its most recent safe previous
        parent (CONFLICT when none is safe) as a fresh, higher-timestamped
        compensation op; unless that undone node was n itself, finally apply
        the parent change.
        """
        with self._lock:
            self.ops_received += 1
            return self._apply_remote_inner(op)

    def _apply_remote_inner(self, op: MoveOp) -> RemoteApplyOutcome:
        out = RemoteApplyOutcome()
        if op.n in SENTINELS or op.ts.counter < 1:
            log.warning("replica %d: rejecting malformed op %s", self.id, op)
            out.rejected_malformed = True
            return out
        state = self.state
        nodes = state.nodes

        if op.p not in nodes:
            # No causal delivery: p's insert may still be in flight. Create a
            # placeholder under CONFLICT with the zero timestamp so that the
            # real insert op wins whenever it arrives.
            state.add_node(op.p, CONFLICT, ZERO_TS)
            out.created_missing_parent = True
        node = nodes.get(op.n)
        created_n = node is None
        if created_n:
            # Fresh node: insert semantics, no previous position to record.
            node = state.add_node(op.n, op.p, ZERO_TS)

        if op.ts <= node.ts:
            # Equal ts means the identical op redelivered (timestamps are
            # globally unique per op): ignoring keeps apply idempotent.
            out.stale_ignored = True
            self.stale_ignored += 1
            return out

        node.ts = op.ts  # stamp before cycle detection so find_last sees this op
        self.clock.witness(op.ts)
        if not created_n:
            self.present_log.record(op.n, node.parent)

        undo_node: NodeId | None = None
        if state.check_cycle(op.n, op.p):
            out.cycle_detected = True
            undo_node = find_last(state, op.n, op.p)
            undo_parent = self._pop_safe_inner(undo_node, op.n, out.rejected_parents)
            out.undo_node = undo_node
            out.undo_parent = undo_parent
            # The chosen parent must lie outside n's subtree.
            assert not state.check_cycle(op.n, undo_parent)
            compensation, comp_applied = self._apply_local_inner(undo_node, undo_parent)
            assert comp_applied, "compensation target must be safe for the undone node"
            out.compensation = compensation
            self.compensations += 1

        if undo_node == op.n and undo_node is not None:
            # The compensation already re-parented n with a higher timestamp.
            return out

        if out.cycle_detected:
            assert not state.check_cycle(op.n, op.p), "compensation failed to break the cycle"
        node.parent = op.p
        node.ts = op.ts
        out.applied = True
        return out

    def pop_safe_previous_parent(self, undo_node: NodeId, n: NodeId) -> NodeId:
        """Pop previous parents of undo_node until one is outside n's subtree.

        Returns CONFLICT when the history is exhausted. Destructive: rejected
        entries are discarded.
        """
        with self._lock:
            return self._pop_safe_inner(undo_node, n, [])

    def _pop_safe_inner(self, undo_node: NodeId, n: NodeId, rejected: list[NodeId]) -> NodeId:
        while True:
            candidate = self.present_log.pop(undo_node)
            if candidate is None:
                return CONFLICT
            if not self.state.check_cycle(n, candidate):
                return candidate
            rejected.append(candidate)

    # -- transport ----------------------------------------------------------

    def drain_outbox(self) -> list[MoveOp]:
        """Return and clear pending broadcasts in generation order."""
        with self._lock:
            drained = self.outbox
            self.outbox = []
            return drained

    def snapshot(self) -> bytes:
        """Canonical serialized tree, taken under the replica exclusion."""
        with self._lock:
            return self.state.serialize()

    def stats(self) -> dict[str, int]:
        return {
            "generated": self.ops_generated,
            "received": self.ops_received,
            "stale_ignored": self.stale_ignored,
            "compensations": self.compensations,
            "local_skips": self.local_skips,
            "self_resolved": self.self_resolved,
        }

    def clone(self) -> Replica:
        """Deep-enough copy for exhaustive interleaving search (no lock state shared)."""
        dup = Replica(self.id, self.present_log.m)
        dup.clock = LamportClock(self.clock.replica, self.clock.lc_time)
        dup.state = self.state.clone()
        dup.present_log.entries = {
            k: deque(v, maxlen=self.present_log.m) for k, v in self.present_log.entries.items()
        }
        dup.outbox = list(self.outbox)
        dup.ops_generated = self.ops_generated
        dup.ops_received = self.ops_received
        dup.stale_ignored = self.stale_ignored
        dup.compensations = self.compensations
        dup.local_skips = self.local_skips
        dup.self_resolved = self.self_resolved
        return dup
