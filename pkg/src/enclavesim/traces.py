"""Execution traces: per-step observables and their coarse, attacker-eye view.

Each step gets classified from the shapes of its before/after configurations:

* ``jmpin``   control entered protected code (registers are visible: the
  context chose them);
* ``jmpout``  control left protected code, including the case where the
  owed tail padding resolves into unprotected code (times are visible);
* ``handle``  an interrupt dispatched out of protected code (backup newly
  occupied, handler running);
* ``reti``    a handler returned toward protected code (backup released or
  downgraded to tail padding);
* ``tau``     a protected-mode step (only its duration is observable);
* ``xi``      an unprotected-mode step (invisible: the attacker is the one
  running, it learns nothing new);
* ``halt``    the machine halted.

Durations: tau/handle/reti/jmpout expose their cycle count; xi and jmpin
expose nothing. Addresses inside the data section never execute, so for
classification purposes "protected mode" means pc inside protected code and
everything else counts as unprotected.

The coarse trace collapses everything between an entry and the matching exit
into the exit's total duration: jmpin(R) ... jmpout(dt, R') ... optionally
ending in halt. A halt while inside protected execution (a handler halting
the machine mid-enclave) is itself coarsely visible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .cpu import Config, FullBackup, Machine, PadBackup, step
from .device import StuckConfiguration
from .isa import decode
from .memory import Layout
from .regs import PC

TIMED = frozenset(("tau", "jmpout", "handle", "reti"))


@dataclass(frozen=True)
class StepObs:
    kind: str
    k: int
    pre_t: int
    pre_pc: int
    regs: Optional[tuple]  # post registers, jmpin/jmpout only
    ilen: int

    @property
    def post_t(self) -> int:
        return self.pre_t + self.k


def time_of(obs: StepObs) -> int:
    return obs.k if obs.kind in TIMED else 0


def classify(pre: Config, post: Config, layout: Layout) -> str:
    if post.halted:
        return "halt"
    pre_pm = layout.in_code(pre.regs[PC])
    post_pm = layout.in_code(post.regs[PC])
    if isinstance(pre.backup, PadBackup):
        if isinstance(post.backup, FullBackup):
            return "handle"
        return "tau" if post_pm else "jmpout"
    if isinstance(post.backup, FullBackup) and not isinstance(pre.backup, FullBackup):
        return "handle"
    if isinstance(pre.backup, FullBackup):
        if isinstance(post.backup, PadBackup):
            return "reti"
        if post.backup is None:
            return "reti" if post_pm else "xi"
        return "xi"
    if not pre_pm and post_pm:
        return "jmpin"
    if pre_pm and not post_pm:
        return "jmpout"
    if pre_pm and post_pm:
        return "tau"
    return "xi"


def ilen(pre: Config, mem, layout: Layout) -> int:
    """Cycle cost of the instruction about to run, when the configuration is
    plain protected-mode execution; 0 otherwise."""
    if pre.halted or pre.backup is not None:
        return 0
    if not layout.in_code(pre.regs[PC]):
        return 0
    i = decode(mem, pre.regs[PC])
    return i.cycles if i else 0


@dataclass
class RunResult:
    outcome: str  # 'halted' | 'fuel' | 'stuck'
    fine: list
    snapshots: list  # (fine index, Config, memory bytes) after each jmpin

    @property
    def converged(self) -> bool:
        return self.outcome == "halted"


def run_machine(m: Machine, fuel: int, want_snapshots: bool = False) -> RunResult:
    """Step up to `fuel` times, recording the fine trace."""
    fine: list[StepObs] = []
    snaps = []
    for _ in range(fuel):
        pre = m.cfg
        if pre.halted:
            break
        pre_ilen = ilen(pre, m.mem, m.layout)
        try:
            post = step(m)
        except StuckConfiguration:
            return RunResult("stuck", fine, snaps)
        kind = classify(pre, post, m.layout)
        regs = post.regs if kind in ("jmpin", "jmpout") else None
        fine.append(StepObs(kind, post.t - pre.t, pre.t, pre.regs[PC], regs, pre_ilen))
        if kind == "jmpin" and want_snapshots:
            snaps.append((len(fine) - 1, post, bytes(m.mem)))
        if kind == "halt":
            return RunResult("halted", fine, snaps)
    return RunResult("halted" if m.cfg.halted else "fuel", fine, snaps)


# --- coarse traces ----------------------------------------------------------


@dataclass(frozen=True)
class Coarse:
    kind: str  # 'jmpin' | 'jmpout' | 'halt'
    dt: int = 0
    regs: Optional[tuple] = None


def coarse_trace(fine) -> list[Coarse]:
    out: list[Coarse] = []
    inside = False
    acc = 0
    for obs in fine:
        if not inside:
            if obs.kind == "jmpin":
                out.append(Coarse("jmpin", 0, obs.regs))
                inside = True
                acc = 0
            elif obs.kind == "halt":
                out.append(Coarse("halt"))
                break
        else:
            if obs.kind == "jmpout":
                out.append(Coarse("jmpout", acc + obs.k, obs.regs))
                inside = False
            elif obs.kind == "halt":
                out.append(Coarse("halt"))
                break
            else:
                acc += time_of(obs)
    return out


def complete_segments(fine) -> int:
    """Count handler episodes: a dispatch followed (through invisible steps
    only) by its return."""
    n = 0
    i = 0
    while i < len(fine):
        if fine[i].kind == "handle":
            j = i + 1
            while j < len(fine) and fine[j].kind == "xi":
                j += 1
            if j < len(fine) and fine[j].kind == "reti":
                n += 1
                i = j
        i += 1
    return n


def equal_up_to_timings(a: list[Coarse], b: list[Coarse]) -> bool:
    """Positionwise equality, except jmpout durations may differ."""
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if x.kind != y.kind:
            return False
        if x.kind in ("jmpin", "jmpout") and x.regs != y.regs:
            return False
    return True


# --- dump formats -----------------------------------------------------------


def _fmt_regs(regs) -> str:
    return " ".join(f"r{i}={v:04x}" for i, v in enumerate(regs))


def dump_fine(fine) -> list[str]:
    """Text lines for a fine trace. Invisible (xi) steps are omitted: they
    carry neither time nor registers."""
    lines = []
    for obs in fine:
        if obs.kind == "xi":
            continue
        if obs.kind == "tau":
            lines.append(f"TAU {obs.k}")
        elif obs.kind == "jmpin":
            lines.append(f"JMPIN {_fmt_regs(obs.regs)}")
        elif obs.kind == "jmpout":
            lines.append(f"JMPOUT dt={obs.k} {_fmt_regs(obs.regs)}")
        elif obs.kind == "handle":
            lines.append(f"HANDLE {obs.k}")
        elif obs.kind == "reti":
            lines.append(f"RETI {obs.k}")
        elif obs.kind == "halt":
            lines.append("CONV")
    return lines


def dump_fine_csv(fine) -> list[str]:
    rows = ["kind,dt," + ",".join(f"r{i}" for i in range(16))]
    for obs in fine:
        if obs.kind == "xi":
            continue
        regs = [f"{v:04x}" for v in obs.regs] if obs.regs else [""] * 16
        rows.append(f"{obs.kind},{obs.k}," + ",".join(regs))
    return rows
