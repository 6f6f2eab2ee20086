import functools
import random

import pytest
from hypothesis import given, strategies as st

from movetree.clock import MAX_COUNTER, LamportClock, Timestamp, compare


def test_tick_increments_from_zero():
    clock = LamportClock(1)
    assert clock.tick() == Timestamp(1, 1)
    assert clock.tick() == Timestamp(2, 1)


def test_tick_after_clock_reaches_five():
    clock = LamportClock(0, lc_time=5)
    assert clock.tick() == Timestamp(6, 0)


def test_thousand_ticks_distinct_and_increasing():
    clock = LamportClock(2)
    stamps = [clock.tick() for _ in range(1000)]
    assert len(set(stamps)) == 1000
    assert stamps == sorted(stamps)


def test_witness_raises_counter_to_received():
    clock = LamportClock(0, lc_time=3)
    clock.witness(Timestamp(7, 2))
    assert clock.lc_time == 7


def test_witness_keeps_larger_counter():
    clock = LamportClock(0, lc_time=9)
    clock.witness(Timestamp(4, 2))
    assert clock.lc_time == 9


def test_witness_own_echo_is_idempotent():
    clock = LamportClock(3)
    ts = clock.tick()
    clock.witness(ts)
    assert clock.lc_time == ts.counter


def test_compare_counter_dominates():
    assert compare(Timestamp(6, 0), Timestamp(7, 1)) == -1


def test_compare_breaks_ties_by_replica():
    assert compare(Timestamp(5, 1), Timestamp(5, 2)) == -1
    assert compare(Timestamp(5, 2), Timestamp(5, 1)) == 1
    assert compare(Timestamp(5, 1), Timestamp(5, 1)) == 0


def test_compare_matches_tuple_sort_oracle():
    rng = random.Random(7)
    stamps = [Timestamp(rng.randrange(50), rng.randrange(8)) for _ in range(100)]
    by_compare = sorted(stamps, key=functools.cmp_to_key(compare))
    assert by_compare == sorted(stamps, key=lambda t: (t.counter, t.replica))


def test_distinct_pairs_never_compare_equal():
    rng = random.Random(11)
    stamps = {Timestamp(rng.randrange(30), rng.randrange(4)) for _ in range(200)}
    stamps = list(stamps)
    for i, a in enumerate(stamps):
        for b in stamps[i + 1 :]:
            assert compare(a, b) != 0


def test_counter_overflow_is_fatal():
    clock = LamportClock(0, lc_time=MAX_COUNTER)
    with pytest.raises(OverflowError):
        clock.tick()


clock_events = st.lists(
    st.one_of(st.none(), st.tuples(st.integers(0, 60), st.integers(0, 5))),
    max_size=80,
)


@given(clock_events)
def test_clock_dominates_every_counter_seen(events):
    clock = LamportClock(0)
    high = 0
    for event in events:
        if event is None:
            high = max(high, clock.tick().counter)
        else:
            ts = Timestamp(*event)
            clock.witness(ts)
            high = max(high, ts.counter)
        assert clock.lc_time >= high


@given(st.integers(1, 1000), st.integers(1, 5))
def test_tick_after_witness_exceeds_foreign_timestamp(counter, replica):
    clock = LamportClock(0)
    foreign = Timestamp(counter, replica)
    clock.witness(foreign)
    assert clock.tick() > foreign
