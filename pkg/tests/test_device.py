"""Device automata: stepping, arrival latching, stripping, unrolling, scripts."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from enclavesim.device import (
    SINK,
    Schedule,
    TableDevice,
    Timer,
    UnrollTooLarge,
    dwrap,
    limit_interrupts,
    parse_device_script,
    strip_interrupts,
)


def test_dwrap_latches_the_first_arrival():
    dev = Schedule((24,))
    # Arrival is indexed by the pre-tick state, so a request scheduled for
    # cycle 24 is latched as exactly 24.
    assert dwrap(dev, 21, 21, None, 5) == (26, 26, 24)


def test_dwrap_keeps_an_existing_arrival():
    dev = Schedule((24,))
    s, t, ta = dwrap(dev, 20, 20, 7, 10)
    assert (s, t, ta) == (30, 30, 7)


def test_dwrap_zero_cycles_is_identity():
    dev = Schedule((0,))
    assert dwrap(dev, 5, 5, None, 0) == (5, 5, None)


def test_dwrap_first_of_several_requests_wins():
    dev = Schedule((3, 5))
    assert dwrap(dev, 0, 0, None, 10) == (10, 10, 3)


def test_timer_counts_and_wraps():
    dev = Timer()
    assert dev.tick(0) == (1, False)
    assert dev.tick(0xFFFF) == (0, False)


def test_timer_read_is_nondestructive():
    dev = Timer()
    assert dev.read(1234) == (1234, 1234)
    assert dev.write(1234, 0xBEEF) == 1234


def test_timer_never_requests_an_interrupt():
    dev = Timer()
    s, t, ta = dwrap(dev, 0, 0, None, 1000)
    assert (s, t, ta) == (1000, 1000, None)


def test_sink_state_is_absorbing():
    for dev in (Timer(), Schedule((1,))):
        assert dev.tick(SINK) == (SINK, False)
        assert dev.read(SINK) is None


def test_schedule_fires_on_the_pre_tick_state():
    dev = Schedule((24,))
    assert dev.tick(23) == (24, False)
    assert dev.tick(24) == (25, True)


def test_schedule_read_responses():
    dev = Schedule((), responses={5: 0xAB})
    assert dev.read(5) == (0xAB, 5)  # state preserved
    assert dev.read(6) == (0, 6)  # default word


def test_table_device_exact_write_beats_wildcard():
    dev = TableDevice(wrs={(0, 7): 1}, wr_any={0: 2})
    assert dev.write(0, 7) == 1
    assert dev.write(0, 8) == 2
    assert dev.write(3, 0) == SINK  # nothing configured


def test_table_device_missing_transitions_sink():
    dev = TableDevice(eps={0: (1, False)})
    assert dev.tick(0) == (1, False)
    assert dev.tick(1) == (SINK, False)
    assert dev.read(0) is None


def test_table_device_states():
    dev = TableDevice(eps={0: (1, False)}, rds={2: (0, 2)}, wrs={(3, 1): 0}, wr_any={4: 0})
    assert dev.states() == {0, 2, 3, 4}


def test_strip_suppresses_requests_and_nothing_else():
    dev = Schedule((2,), responses={1: 0x11})
    quiet = strip_interrupts(dev)
    assert quiet.tick(2) == (3, False)
    assert quiet.read(1) == (0x11, 1)
    assert quiet.write(1, 0) == 1


def test_strip_is_idempotent():
    quiet = strip_interrupts(Schedule((2,)))
    assert strip_interrupts(quiet) is quiet


def test_unroll_keeps_only_allowed_arrivals():
    dev = Schedule((3, 5))
    table = limit_interrupts(dev, allowed_steps=(3,), depth=8)
    assert dwrap(table, table.initial, 0, None, 8)[2] == 3


def test_unroll_sinks_past_the_horizon():
    dev = Schedule((10,))
    table = limit_interrupts(dev, allowed_steps=(10,), depth=8)
    s, t, ta = dwrap(table, table.initial, 0, None, 30)
    assert ta is None  # the arrival sits beyond the horizon
    assert s == SINK


def test_unroll_of_a_counter_is_small():
    # A counter's reads and writes stay in place, so the tree is one node
    # per cycle index.
    table = limit_interrupts(Timer(), (), depth=5)
    assert len(table.states()) <= 6


def test_unroll_preserves_reads():
    dev = Schedule((), responses={2: 0x77})
    table = limit_interrupts(dev, (), depth=4)
    s, _, _ = dwrap(table, table.initial, 0, None, 2)
    assert table.read(s)[0] == 0x77


def test_unroll_node_budget():
    with pytest.raises(UnrollTooLarge):
        limit_interrupts(Timer(), (), depth=100, max_nodes=10)


def test_script_timer():
    dev = parse_device_script("kind timer\n")
    assert isinstance(dev, Timer)


def test_script_schedule():
    text = """
    # arrival plan
    kind schedule
    int_at 23
    int_at 0x40
    read_response 5 beef
    """
    dev = parse_device_script(text)
    assert isinstance(dev, Schedule)
    assert dev.int_times == frozenset((23, 0x40))
    assert dev.responses == {5: 0xBEEF}


@pytest.mark.parametrize(
    "text",
    [
        "int_at 3\n",  # missing kind
        "kind schedule\nint_at\n",  # arity
        "kind schedule\nfire 3\n",  # unknown directive
        "kind timer\nint_at 3\n",  # timers take no schedule lines
        "kind sched\n",  # unknown kind
        "kind schedule\nread_response 5\n",  # arity
    ],
)
def test_script_rejects_malformed_input(text):
    with pytest.raises(ValueError):
        parse_device_script(text)


@given(
    st.frozensets(st.integers(0, 40), max_size=6),
    st.integers(0, 20),
    st.integers(0, 15),
    st.integers(0, 15),
)
def test_dwrap_splits_compose(times, start, a, b):
    dev = Schedule(times)
    whole = dwrap(dev, start, start, None, a + b)
    s1, t1, ta1 = dwrap(dev, start, start, None, a)
    assert dwrap(dev, s1, t1, ta1, b) == whole


@given(st.frozensets(st.integers(0, 40), max_size=6), st.integers(0, 30), st.integers(0, 20))
def test_dwrap_is_deterministic(times, start, k):
    dev = Schedule(times)
    assert dwrap(dev, start, start, None, k) == dwrap(dev, start, start, None, k)
