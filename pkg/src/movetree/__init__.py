"""Coordination-free move operation on a replicated tree, with simulator and tooling."""

from .baseline import BaselineReplica, LogEntry
from .clock import LamportClock, Timestamp, ZERO_TS, compare
from .movecrdt import MoveOp, PresentLog, RemoteApplyOutcome, Replica, find_last
from .netsim import (
    SimConfig,
    SimEvent,
    SimReport,
    exhaustive_interleavings,
    geo_latency,
    random_workload,
    run_scenario,
)
from .tree import CONFLICT, ROOT, SENTINELS, TRASH, TreeNode, TreeState

__all__ = [
    "BaselineReplica",
    "CONFLICT",
    "LamportClock",
    "LogEntry",
    "MoveOp",
    "PresentLog",
    "ROOT",
    "RemoteApplyOutcome",
    "Replica",
    "SENTINELS",
    "SimConfig",
    "SimEvent",
    "SimReport",
    "TRASH",
    "Timestamp",
    "TreeNode",
    "TreeState",
    "ZERO_TS",
    "compare",
    "exhaustive_interleavings",
    "find_last",
    "geo_latency",
    "random_workload",
    "run_scenario",
]

__version__ = "0.1.0"
