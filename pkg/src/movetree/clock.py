"""Lamport clocks with replica-id tiebreak: globally unique, totally ordered timestamps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

# Counters are conceptually u64; exceeding this is a fatal error, never a wrap.
MAX_COUNTER = 2**64 - 1


class Timestamp(NamedTuple):
    """Logical timestamp: (counter, replica). Tuple order gives the total order."""

    counter: int
    replica: int


#: Smallest possible timestamp, used for sentinel nodes and placeholder records.
ZERO_TS = Timestamp(0, 0)


def compare(a: Timestamp, b: Timestamp) -> int:
    """Return -1/0/1 for a<b / a==b / a>b in the (counter, replica) total order."""
    if a < b:
        return -1
    if a > b:
        return 1
    return 0


@dataclass
class LamportClock:
    """Per-replica logical clock.

    Callers must serialize tick/witness externally; the replica object that
    owns the clock holds the mutual exclusion.
    """

    replica: int
    lc_time: int = 0

    def tick(self) -> Timestamp:
        """Advance the counter and return a fresh timestamp for a local operation."""
        if self.lc_time >= MAX_COUNTER:
            raise OverflowError(f"lamport counter exhausted at replica {self.replica}")
        self.lc_time += 1
        return Timestamp(self.lc_time, self.replica)

    def witness(self, ts: Timestamp) -> None:
        """Absorb a received timestamp: lc_time := max(lc_time, ts.counter).

        The receive rule is a plain max (no increment); uniqueness is preserved
        because local ticks pre-increment and ties are broken by replica id.
        """
        if ts.counter > self.lc_time:
            if ts.counter > MAX_COUNTER:
                raise OverflowError("witnessed timestamp exceeds counter range")
            self.lc_time = ts.counter
