"""Replicated tree state: parent map, reserved sentinel nodes, ancestor queries."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .clock import Timestamp, ZERO_TS

NodeId = int

#: Reserved node ids. User nodes are >= 3.
ROOT: NodeId = 0
TRASH: NodeId = 1
CONFLICT: NodeId = 2
SENTINELS = (ROOT, TRASH, CONFLICT)


class CorruptTreeError(RuntimeError):
    """A parent walk exceeded the step bound: the state holds a cycle or dangling edge."""


@dataclass(slots=True)
class TreeNode:
    id: NodeId
    parent: NodeId
    ts: Timestamp  # timestamp of the last operation applied to this node


class TreeState:
    """Node-id -> (parent, last-op timestamp) map rooted at ROOT.

    TRASH and CONFLICT are permanent children of ROOT; ROOT's parent field is
    itself and is never followed. One replica owns the state; all access is
    serialized by the replica's mutual exclusion.
    """

    __slots__ = ("nodes",)

    def __init__(self) -> None:
        self.nodes: dict[NodeId, TreeNode] = {
            ROOT: TreeNode(ROOT, ROOT, ZERO_TS),
            TRASH: TreeNode(TRASH, ROOT, ZERO_TS),
            CONFLICT: TreeNode(CONFLICT, ROOT, ZERO_TS),
        }

    def get_node(self, node_id: NodeId) -> TreeNode | None:
        """Return the node record, or None if the id was never seen."""
        return self.nodes.get(node_id)

    def add_node(self, node_id: NodeId, parent: NodeId, ts: Timestamp) -> TreeNode:
        node = TreeNode(node_id, parent, ts)
        self.nodes[node_id] = node
        return node

    def check_cycle(self, n: NodeId, p: NodeId) -> bool:
        """True iff n is an ancestor of p (p itself included), i.e. moving n under p would cycle.

        Walks parent links from p up to ROOT. n == p counts as a cycle, which
        uniformly rejects self-moves.
        """
        nodes = self.nodes
        cur = p
        steps = len(nodes) + 1
        while cur != ROOT:
            if cur == n:
                return True
            cur = nodes[cur].parent
            steps -= 1
            if steps < 0:
                raise CorruptTreeError(f"ancestor walk from {p} did not terminate")
        return False

    def path_to_root(self, node_id: NodeId) -> list[NodeId]:
        """Return [node_id, parent, ..., ROOT]; fatal if the walk does not terminate."""
        nodes = self.nodes
        path = [node_id]
        cur = node_id
        steps = len(nodes) + 1
        while cur != ROOT:
            cur = nodes[cur].parent
            path.append(cur)
            steps -= 1
            if steps < 0:
                raise CorruptTreeError(f"parent walk from {node_id} did not terminate")
        return path

    def is_reachable_from_root(self, node_id: NodeId) -> bool:
        """True iff the parent walk from node_id terminates at ROOT."""
        nodes = self.nodes
        cur = node_id
        steps = len(nodes) + 1
        while cur != ROOT:
            record = nodes.get(cur)
            if record is None:
                return False
            cur = record.parent
            steps -= 1
            if steps < 0:
                return False
        return True

    def user_ids(self) -> list[NodeId]:
        return [i for i in self.nodes if i not in SENTINELS]

    def validate_well_formed(self) -> None:
        """Full structural check: single parent, acyclic, connected.

        Single-parent holds structurally (one record per id); this verifies
        that every parent exists, every node reaches ROOT, and sentinels sit
        where they must. Raises CorruptTreeError on any violation.
        """
        nodes = self.nodes
        if nodes[TRASH].parent != ROOT or nodes[CONFLICT].parent != ROOT:
            raise CorruptTreeError("sentinel parent changed")
        ok: set[NodeId] = {ROOT}
        for node_id in nodes:
            trail = []
            cur = node_id
            while cur not in ok:
                trail.append(cur)
                record = nodes.get(cur)
                if record is None:
                    raise CorruptTreeError(f"node {trail[0]} has dangling ancestor {cur}")
                cur = record.parent
                if len(trail) > len(nodes):
                    raise CorruptTreeError(f"cycle through node {node_id}")
            ok.update(trail)

    def serialize(self) -> bytes:
        """Canonical byte form: nodes sorted by id as [id, parent, counter, replica] rows.

        Two states are converged iff their serializations are byte-identical.
        """
        rows = [
            [n.id, n.parent, n.ts.counter, n.ts.replica]
            for n in sorted(self.nodes.values(), key=lambda n: n.id)
        ]
        return json.dumps(rows, separators=(",", ":")).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def clone(self) -> TreeState:
        dup = TreeState.__new__(TreeState)
        dup.nodes = {i: TreeNode(n.id, n.parent, n.ts) for i, n in self.nodes.items()}
        return dup

    def __len__(self) -> int:
        return len(self.nodes)
