"""Shared builders for replica and tree fixtures."""
from __future__ import annotations

import random

from movetree.clock import Timestamp
from movetree.movecrdt import MoveOp, Replica
from movetree.tree import ROOT, TreeState


def build_replica_pair(inserts: list[tuple[int, int]], m: int = 5) -> tuple[Replica, Replica]:
    """Two replicas sharing an initial tree: r0 issues the inserts, r1 applies them."""
    r0, r1 = Replica(0, m=m), Replica(1, m=m)
    for n, p in inserts:
        r0.submit(n, p)
    for op in r0.drain_outbox():
        r1.apply_remote(op)
    r1.drain_outbox()
    return r0, r1


def random_tree_state(rng: random.Random, size: int) -> TreeState:
    """A valid random tree: each new node parented under a uniformly chosen earlier node."""
    state = TreeState()
    pool = [ROOT]
    for node_id in range(3, 3 + size):
        ts = Timestamp(rng.randrange(1, 100), rng.randrange(3))
        state.add_node(node_id, rng.choice(pool), ts)
        pool.append(node_id)
    return state


def exchange_all(replicas: list[Replica]) -> int:
    """Deliver every pending broadcast FIFO until quiescence; returns ops delivered."""
    delivered = 0
    progress = True
    while progress:
        progress = False
        for sender in replicas:
            ops = sender.drain_outbox()
            if not ops:
                continue
            progress = True
            for op in ops:
                for receiver in replicas:
                    if receiver is not sender:
                        receiver.apply_remote(op)
                        delivered += 1
    return delivered


def lww_fold(ledger: list[MoveOp]) -> dict[int, tuple[int, tuple]]:
    """Brute-force last-write-wins oracle: max-ts op per node over the whole ledger."""
    final: dict[int, tuple[int, tuple]] = {}
    for op in ledger:
        current = final.get(op.n)
        if current is None or op.ts > current[1]:
            final[op.n] = (op.p, op.ts)
    return final
