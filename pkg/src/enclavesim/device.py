"""Deterministic I/O devices and the machine/device synchronization wrapper.

A device is a deterministic automaton over integer states with four kinds of
transitions: internal steps (one per machine cycle, optionally raising an
interrupt request), reads (CPU pulls a word), and writes (CPU pushes a word).
Every state takes exactly one internal step per cycle. At most one read
transition exists per state. Undefined reads leave the CPU stuck; undefined
writes and internal steps fall into an absorbing sink state that never
interrupts.

`dwrap` advances a device k cycles and tracks the pending-interrupt time:
the first interrupt request seen while no request is pending records its
cycle; an already pending request is never overwritten.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

SINK = -1


class StuckConfiguration(Exception):
    """CPU read with no read transition enabled: the machine jams."""


class UnrollTooLarge(Exception):
    """Interrupt-limited unrolling exceeded its node budget."""


class Device(Protocol):
    def tick(self, s: int) -> tuple[int, bool]:
        """One internal step from s: (next state, interrupt raised?)."""

    def read(self, s: int) -> Optional[tuple[int, int]]:
        """Read transition from s: (word, next state), or None if absent."""

    def write(self, s: int, w: int) -> int:
        """Write transition from s; undefined writes land in the sink."""


def dwrap(dev: Device, s: int, t: int, t_arr: Optional[int], k: int):
    """Run k device cycles from (s, t). Returns (s', t+k, t_arr')."""
    for j in range(k):
        s, fired = dev.tick(s)
        if fired and t_arr is None:
            t_arr = t + j
    return s, t + k, t_arr


class Timer:
    """Free-running 16-bit cycle counter. Reads are non-destructive; writes
    are ignored. Never raises an interrupt."""

    initial = 0

    def tick(self, s):
        if s == SINK:
            return SINK, False
        return (s + 1) & 0xFFFF, False

    def read(self, s):
        if s == SINK:
            return None
        return s, s

    def write(self, s, w):
        return s

    def describe(self):
        return "timer"


class Schedule:
    """Interrupt schedule: raises a request at each listed cycle index.

    The state is the device's own cycle count, which equals global time since
    the machine ticks the device exactly once per cycle. Reads return the
    word configured for the current cycle (default 0) and keep the state;
    writes are accepted and ignored.
    """

    initial = 0

    def __init__(self, int_times=(), responses=None):
        self.int_times = frozenset(int_times)
        self.responses = dict(responses or {})

    def tick(self, s):
        if s == SINK:
            return SINK, False
        return s + 1, s in self.int_times

    def read(self, s):
        if s == SINK:
            return None
        return self.responses.get(s, 0), s

    def write(self, s, w):
        return s

    def describe(self):
        return f"schedule({len(self.int_times)} arrivals)"


@dataclass
class TableDevice:
    """Explicit transition tables; the form backtranslation builds.

    eps maps state -> (next, fired); rds maps state -> (word, next);
    wrs maps (state, word) -> next and wr_any is the per-state wildcard.
    Anything missing sinks (except reads, which are simply not enabled).
    """

    eps: dict = field(default_factory=dict)
    rds: dict = field(default_factory=dict)
    wrs: dict = field(default_factory=dict)
    wr_any: dict = field(default_factory=dict)
    initial: int = 0

    def tick(self, s):
        return self.eps.get(s, (SINK, False))

    def read(self, s):
        return self.rds.get(s)

    def write(self, s, w):
        nxt = self.wrs.get((s, w))
        if nxt is None:
            nxt = self.wr_any.get(s, SINK)
        return nxt

    def describe(self):
        return f"table({len(self.eps)} states)"

    def states(self):
        seen = set(self.eps) | set(self.rds) | set(self.wr_any)
        seen.update(s for s, _ in self.wrs)
        return seen


class StrippedDevice:
    """Same device, interrupt requests suppressed."""

    def __init__(self, inner: Device):
        self.inner = inner
        self.initial = getattr(inner, "initial", 0)

    def tick(self, s):
        s2, _ = self.inner.tick(s)
        return s2, False

    def read(self, s):
        return self.inner.read(s)

    def write(self, s, w):
        return self.inner.write(s, w)

    def describe(self):
        return f"strip({self.inner.describe()})"


def strip_interrupts(dev: Device) -> Device:
    """Suppress all interrupt requests. Idempotent."""
    if isinstance(dev, StrippedDevice):
        return dev
    return StrippedDevice(dev)


def limit_interrupts(dev: Device, allowed_steps, depth: int, max_nodes: int = 1 << 16) -> TableDevice:
    """Unroll dev to `depth` cycles, keeping interrupt requests only at the
    cycle indices in allowed_steps; all other requests become plain steps.
    Nodes at the horizon get no transitions, so the device sinks there.

    The unrolled automaton's states pair an original state with a cycle
    index, so its size is bounded by reachable-states x depth; exceeding
    max_nodes raises UnrollTooLarge.
    """
    allowed = frozenset(allowed_steps)
    table = TableDevice()
    index: dict[tuple[int, int], int] = {}

    def node(orig: int, j: int) -> int:
        key = (orig, j)
        if key not in index:
            if len(index) >= max_nodes:
                raise UnrollTooLarge(f"more than {max_nodes} nodes")
            index[key] = len(index)
        return index[key]

    start = getattr(dev, "initial", 0)
    frontier = [(start, 0)]
    seen = set()
    while frontier:
        orig, j = frontier.pop()
        if (orig, j) in seen:
            continue
        seen.add((orig, j))
        me = node(orig, j)
        if j == depth:
            continue
        nxt, fired = dev.tick(orig)
        fired = fired and j in allowed
        table.eps[me] = (node(nxt, j + 1), fired)
        frontier.append((nxt, j + 1))
        rd = dev.read(orig)
        if rd is not None:
            w, s2 = rd
            table.rds[me] = (w, node(s2, j))
            frontier.append((s2, j))
        # Writes are wildcarded to wherever a zero write goes; table devices
        # with word-sensitive writes do not round-trip through unrolling.
        w2 = dev.write(orig, 0)
        if w2 != SINK:
            table.wr_any[me] = node(w2, j)
            frontier.append((w2, j))
    table.initial = node(start, 0)
    return table


def parse_device_script(text: str) -> Device:
    """Line format: `kind timer|schedule`, then for schedules any number of
    `int_at <cycle>` and `read_response <cycle> <hex-word>` lines. Blank
    lines and lines starting with # are skipped."""
    kind = None
    int_times = []
    responses = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "kind":
            if len(parts) != 2 or parts[1] not in ("timer", "schedule"):
                raise ValueError(f"line {lineno}: kind must be timer or schedule")
            kind = parts[1]
        elif parts[0] == "int_at":
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: int_at takes one cycle number")
            int_times.append(int(parts[1], 0))
        elif parts[0] == "read_response":
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: read_response takes cycle and word")
            responses[int(parts[1], 0)] = int(parts[2], 16) & 0xFFFF
        else:
            raise ValueError(f"line {lineno}: unknown directive {parts[0]!r}")
    if kind is None:
        raise ValueError("device script missing `kind` line")
    if kind == "timer":
        if int_times or responses:
            raise ValueError("timer devices take no int_at/read_response lines")
        return Timer()
    return Schedule(int_times, responses)


def load_device_script(path: str) -> Device:
    with open(path) as f:
        return parse_device_script(f.read())
