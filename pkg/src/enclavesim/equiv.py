"""Distinguishing protected modules, and turning padded-policy trace
divergences back into plain uninterruptible contexts.

A *module* is the protected half of a memory image: its code and data
sections plus the layout. A *context* is everything else: unprotected
memory, the device, and the reset vector. ``find_distinguisher`` searches a
family of template contexts for one under which two modules produce
different coarse traces under the padded interruptible policy, then builds
-- from the traces alone -- an uninterruptible context that separates the
two modules by convergence: run it against either module and exactly one
of the compositions halts.

The built context works by replaying the trace: a register-feeding stub
forces each recorded entry state through device reads, exits between
entries are steered back by placing read-and-jump stubs at the recorded
exit targets, and the final divergence is translated into one of four
device gadgets:

* register gadget: the module writes the differing register to the device,
  which branches on the two recorded values;
* pc gadget: the two exit targets announce themselves with a write;
* timing gadget: an idle-tick counter chain, read at the exit, resolves to
  a different depth for each module;
* convergence gadget: the exiting module is sent to a halt stub, the other
  never leaves protected code.

Each gadget routes one module to a halt instruction and the other to a
self-loop (or leaves it inside protected code forever), so the convergence
check is the verdict. All divergence data is re-measured from snapshots
under a stripped device, because the padded run's timings include handler
and padding cycles that the uninterruptible replay never sees.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .asm import assemble_file
from .cpu import Machine, Policy, make_machine
from .device import Device, Schedule, TableDevice, strip_interrupts
from .isa import Instr, Op, encode
from .memory import MEM_SIZE, RESET_VECTOR, Layout, set_word
from .regs import PC, SP
from .traces import Coarse, coarse_trace, run_machine


class BacktranslationError(Exception):
    """The recorded divergence has no uninterruptible counterpart."""


class AnchorCollision(BacktranslationError):
    """A replay stub would overlap protected memory or another stub."""


@dataclass(frozen=True)
class Module:
    layout: Layout
    code: bytes
    data: bytes


def module_from_image(image, layout: Layout) -> Module:
    return Module(layout, bytes(image[layout.ts:layout.te]), bytes(image[layout.ds:layout.de]))


def load_module(path: str) -> Module:
    image, layout, _ = assemble_file(path)
    return module_from_image(image, layout)


def compose(module: Module, ctx_mem) -> bytearray:
    """Context memory with the module's protected sections dropped in."""
    mem = bytearray(ctx_mem)
    lay = module.layout
    mem[lay.ts:lay.te] = module.code
    mem[lay.ds:lay.de] = module.data
    return mem


def converges(mem, layout: Layout, device: Device, policy: Policy, fuel: int) -> bool:
    m = make_machine(bytearray(mem), layout, device, policy)
    return run_machine(m, fuel).converged


# --- template contexts for the divergence search ----------------------------

ENTRY_POINT = 0x0010
STACK_TOP = 0x0F00


@dataclass(frozen=True)
class SearchContext:
    label: str
    mem: bytes
    device: Device


def _context_mem(layout: Layout, isr_op: Op) -> bytes:
    # Halt instructions everywhere (0x0303 decodes to HLT at every even
    # address), so any stray or post-exit control flow converges.
    mem = bytearray(b"\x03" * MEM_SIZE)
    stub = (
        encode(Instr(Op.MOVI, 0, SP, imm=STACK_TOP))
        + encode(Instr(Op.MOVI, 0, 4, imm=layout.ts))
        + encode(Instr(Op.JMP, 0, 4))
    )
    mem[ENTRY_POINT:ENTRY_POINT + len(stub)] = stub
    isr_code = encode(Instr(isr_op))
    mem[layout.isr:layout.isr + len(isr_code)] = isr_code
    set_word(mem, RESET_VECTOR, ENTRY_POINT)
    return bytes(mem)


def make_search_contexts(layout: Layout, budget: int) -> list[SearchContext]:
    """Quiet context first, then one interrupt at each cycle up to the
    budget, with a halting handler and then a returning one."""
    out = [SearchContext("quiet", _context_mem(layout, Op.HLT), Schedule(()))]
    mem_hlt = _context_mem(layout, Op.HLT)
    mem_reti = _context_mem(layout, Op.RETI)
    for t in range(budget):
        sched = Schedule((t,))
        out.append(SearchContext(f"int@{t}/hlt", mem_hlt, sched))
        out.append(SearchContext(f"int@{t}/reti", mem_reti, sched))
    return out


# --- divergence detection ----------------------------------------------------


def first_difference(ca: list[Coarse], cb: list[Coarse]) -> Optional[int]:
    for i, (x, y) in enumerate(zip(ca, cb)):
        if x != y:
            return i
    if len(ca) != len(cb):
        return min(len(ca), len(cb))
    return None


def divergence_kind(oa: Optional[Coarse], ob: Optional[Coarse]) -> str:
    ka = oa.kind if oa else "none"
    kb = ob.kind if ob else "none"
    if ka == kb == "jmpout":
        if any(oa.regs[r] != ob.regs[r] for r in range(16) if r != PC):
            return "register"
        if oa.regs[PC] != ob.regs[PC]:
            return "pc"
        return "timing"
    if {ka, kb} == {"halt", "jmpout"}:
        return "halt-vs-jmpout"
    if {ka, kb} == {"none", "jmpout"}:
        return "silent-vs-jmpout"
    return f"{ka}-vs-{kb}"


# --- re-measuring the divergent segment under the plain policy ---------------


@dataclass(frozen=True)
class Continuation:
    exits: bool
    regs: Optional[tuple] = None
    duration: Optional[int] = None  # cycles from entry through the exit step


def run_continuation(snapshot_mem, layout: Layout, cfg, device: Device,
                     fuel: int) -> Continuation:
    """From a just-entered snapshot, run uninterrupted until protected code
    is left. Protected execution cannot touch the device, so stripping it
    changes nothing but removes interrupt requests."""
    m = Machine(bytearray(snapshot_mem), layout, strip_interrupts(device),
                Policy.ATOMIC, replace(cfg, t_arr=None))
    res = run_machine(m, fuel)
    for obs in res.fine:
        if obs.kind == "jmpout":
            return Continuation(True, obs.regs, obs.post_t - cfg.t)
    return Continuation(False)


# --- building the uninterruptible replay context ------------------------------

# Register order of the feeding stub: the program counter is read last,
# because loading it transfers control into the module.
FEED_ORDER = tuple([SP, 2] + list(range(3, 16)) + [PC])

_IN_PC = encode(Instr(Op.IN, 0, PC))
_STUB_HALT = encode(Instr(Op.HLT))
_STUB_LOOP = encode(Instr(Op.JMP, 0, PC))


@dataclass
class Backtranslation:
    mem: bytes
    device: TableDevice
    anchors: dict
    gadget: str


class _MemBuilder:
    def __init__(self, layout: Layout):
        self.layout = layout
        self.bytes_at: dict[int, int] = {}

    def place(self, addr: int, data: bytes, what: str) -> None:
        for off, b in enumerate(data):
            a = addr + off
            if a >= RESET_VECTOR or not self.layout.is_unprotected(a):
                raise AnchorCollision(f"{what} at {a:#06x} overlaps reserved memory")
            if self.bytes_at.get(a, b) != b:
                raise AnchorCollision(f"{what} at {a:#06x} conflicts with an earlier stub")
            self.bytes_at[a] = b

    def alloc(self, size: int, what: str) -> int:
        addr = ENTRY_POINT
        while addr + size <= RESET_VECTOR:
            span = range(addr, addr + size)
            if all(a not in self.bytes_at and self.layout.is_unprotected(a) for a in span):
                return addr
            addr += 2
        raise AnchorCollision(f"no room for {what}")

    def build(self, entry: int) -> bytes:
        mem = bytearray(MEM_SIZE)
        for a, b in self.bytes_at.items():
            mem[a] = b
        set_word(mem, RESET_VECTOR, entry)
        return bytes(mem)


def build_sh_context(prefix: list[Coarse], cont_a: Continuation,
                     cont_b: Continuation, layout: Layout) -> Backtranslation:
    """Translate a common coarse prefix plus two divergent uninterrupted
    continuations into a context that separates the modules by convergence.
    The module whose data came first (`cont_a`) is routed to the halt stub
    whenever both still leave protected code."""
    if cont_a.exits and cont_b.exits:
        non_pc = [r for r in range(16) if r != PC and cont_a.regs[r] != cont_b.regs[r]]
        if non_pc:
            arm = "register"
        elif cont_a.regs[PC] != cont_b.regs[PC]:
            arm = "pc"
        elif cont_a.duration != cont_b.duration:
            arm = "timing"
        else:
            raise BacktranslationError("uninterrupted continuations are identical")
    elif cont_a.exits or cont_b.exits:
        arm = "convergence"
    else:
        raise BacktranslationError("neither module leaves protected code")

    feeds = [obs.regs for obs in prefix if obs.kind == "jmpin"]
    steer_targets = {obs.regs[PC] for obs in prefix if obs.kind == "jmpout"}

    mb = _MemBuilder(layout)

    # Divergent exit targets first: the pc arm needs a write-then-read stub
    # there, every other arm only a read-and-jump. A steer target that
    # coincides keeps the longer stub; the extra write is absorbed.
    if arm == "pc":
        for cont in (cont_a, cont_b):
            mb.place(cont.regs[PC], encode(Instr(Op.OUT, 0, PC)) + _IN_PC, "exit stub")
    else:
        for cont in (cont_a, cont_b):
            if cont.exits:
                mb.place(cont.regs[PC], _IN_PC, "exit stub")
    out_in = encode(Instr(Op.OUT, 0, PC)) + _IN_PC
    for tgt in sorted(steer_targets):
        if all(mb.bytes_at.get(tgt + i) == out_in[i] for i in range(4)):
            # A divergence stub already sits here; landing on it performs a
            # harmless write and then the same steering read.
            continue
        mb.place(tgt, _IN_PC, "steer stub")

    a_halt = mb.alloc(len(_STUB_HALT), "halt stub")
    mb.place(a_halt, _STUB_HALT, "halt stub")
    a_loop = mb.alloc(len(_STUB_LOOP), "loop stub")
    mb.place(a_loop, _STUB_LOOP, "loop stub")
    feed_code = b"".join(encode(Instr(Op.IN, 0, r)) for r in FEED_ORDER)
    a_feed = mb.alloc(len(feed_code), "feed stub")
    mb.place(a_feed, feed_code, "feed stub")
    a_entry = mb.alloc(4, "entry stub")
    mb.place(a_entry, encode(Instr(Op.OUT, 0, PC)) + _IN_PC, "entry stub")
    anchors = {"entry": a_entry, "feed": a_feed, "halt": a_halt, "loop": a_loop}

    # Device: one register-feeding chain per recorded entry, self-loops
    # while the module runs, then the divergence gadget.
    eps: dict[int, tuple[int, bool]] = {}
    rds: dict[int, tuple[int, int]] = {}
    wrs: dict[tuple[int, int], int] = {}
    wr_any: dict[int, int] = {}
    nxt = 1
    q = 0
    eps[q] = (q, False)
    wr_any[q] = q
    for j, regs in enumerate(feeds):
        vals = [regs[r] for r in FEED_ORDER]
        chain = list(range(nxt, nxt + 16))
        nxt += 16
        inside = nxt
        nxt += 1
        rds[q] = (a_feed, chain[0])
        for i, st in enumerate(chain):
            eps[st] = (st, False)
            rds[st] = (vals[i], chain[i + 1] if i < 15 else inside)
        q = inside
        if j < len(feeds) - 1:
            eps[q] = (q, False)
            wr_any[q] = q

    if arm == "register":
        rdiff = next(r for r in range(16) if r != PC and cont_a.regs[r] != cont_b.regs[r])
        a_probe = mb.alloc(4, "register probe stub")
        mb.place(a_probe, encode(Instr(Op.OUT, 0, rdiff)) + _IN_PC, "register probe stub")
        anchors["probe"] = a_probe
        g1, g2, g3 = nxt, nxt + 1, nxt + 2
        nxt += 3
        eps[q] = (q, False)
        wr_any[q] = q
        rds[q] = (a_probe, g1)
        eps[g1] = (g1, False)
        wrs[(g1, cont_a.regs[rdiff])] = g2
        wrs[(g1, cont_b.regs[rdiff])] = g3
        eps[g2] = (g2, False)
        rds[g2] = (a_halt, g2)
        eps[g3] = (g3, False)
        rds[g3] = (a_loop, g3)
    elif arm == "pc":
        ga, gb = nxt, nxt + 1
        nxt += 2
        eps[q] = (q, False)
        wrs[(q, cont_a.regs[PC])] = ga
        wrs[(q, cont_b.regs[PC])] = gb
        eps[ga] = (ga, False)
        rds[ga] = (a_halt, ga)
        eps[gb] = (gb, False)
        rds[gb] = (a_loop, gb)
    elif arm == "timing":
        # The feeding read's own two wrap cycles tick the chain before the
        # module starts, and the exit read fires before its wrap: depth is
        # the measured duration plus two.
        depth = max(cont_a.duration, cont_b.duration) + 2
        if depth > 1 << 16:
            raise BacktranslationError("timing chain too long")
        chain = [q] + list(range(nxt, nxt + depth))
        nxt += depth
        for i in range(depth):
            eps[chain[i]] = (chain[i + 1], False)
            wr_any[chain[i]] = chain[i]
        last = chain[depth]
        eps[last] = (last, False)
        wr_any[last] = last
        rds[chain[cont_a.duration + 2]] = (a_halt, chain[cont_a.duration + 2])
        rds[chain[cont_b.duration + 2]] = (a_loop, chain[cont_b.duration + 2])
    else:  # convergence
        eps[q] = (q, False)
        wr_any[q] = q
        rds[q] = (a_halt, q)

    device = TableDevice(eps=eps, rds=rds, wrs=wrs, wr_any=wr_any, initial=0)
    return Backtranslation(mb.build(a_entry), device, anchors, arm)


# --- the full pipeline --------------------------------------------------------


@dataclass
class Verdict:
    context_label: str
    divergence_index: int
    divergence: str  # what the padded traces showed
    gadget: str      # which translation arm was used
    coarse_a: list
    coarse_b: list
    mem: bytes
    device: TableDevice
    anchors: dict
    converges_a: bool
    converges_b: bool

    @property
    def ok(self) -> bool:
        return self.converges_a != self.converges_b


def find_distinguisher(mod_a: Module, mod_b: Module, budget: int = 48,
                       fuel: int = 4000, contexts=None,
                       replay_fuel: Optional[int] = None) -> Optional[Verdict]:
    """Search template contexts for a padded-policy trace divergence and
    translate the first one found. Returns None when every context yields
    equal coarse traces."""
    if mod_a.layout != mod_b.layout:
        raise ValueError("modules must share a layout")
    layout = mod_a.layout
    if contexts is None:
        contexts = make_search_contexts(layout, budget)
    if replay_fuel is None:
        replay_fuel = 2 * fuel + 2000

    last_err: Optional[BacktranslationError] = None
    for ctx in contexts:
        run_a = run_machine(make_machine(compose(mod_a, ctx.mem), layout,
                                         ctx.device, Policy.PADDED),
                            fuel, want_snapshots=True)
        run_b = run_machine(make_machine(compose(mod_b, ctx.mem), layout,
                                         ctx.device, Policy.PADDED),
                            fuel, want_snapshots=True)
        ca = coarse_trace(run_a.fine)
        cb = coarse_trace(run_b.fine)
        idx = first_difference(ca, cb)
        if idx is None:
            continue
        try:
            bt = _translate(ca, cb, idx, run_a, run_b, ctx, layout, fuel)
        except BacktranslationError as e:
            last_err = e
            continue
        ok_a = converges(compose(mod_a, bt.mem), layout, bt.device,
                         Policy.ATOMIC, replay_fuel)
        ok_b = converges(compose(mod_b, bt.mem), layout, bt.device,
                         Policy.ATOMIC, replay_fuel)
        oa = ca[idx] if idx < len(ca) else None
        ob = cb[idx] if idx < len(cb) else None
        return Verdict(ctx.label, idx, divergence_kind(oa, ob), bt.gadget,
                       ca, cb, bt.mem, bt.device, bt.anchors, ok_a, ok_b)
    if last_err is not None:
        raise last_err
    return None


def _translate(ca, cb, idx, run_a, run_b, ctx: SearchContext, layout: Layout,
               fuel: int):
    prefix = ca[:idx]
    n_in = sum(1 for o in prefix if o.kind == "jmpin")
    n_out = sum(1 for o in prefix if o.kind == "jmpout")
    if n_in == 0 or n_out != n_in - 1:
        raise BacktranslationError("divergence is not inside a protected segment")
    seg = n_in - 1
    if seg >= len(run_a.snapshots) or seg >= len(run_b.snapshots):
        raise BacktranslationError("missing entry snapshot for the divergent segment")
    _, cfg_a, mem_a = run_a.snapshots[seg]
    _, cfg_b, mem_b = run_b.snapshots[seg]
    cont_a = run_continuation(mem_a, layout, cfg_a, ctx.device, fuel)
    cont_b = run_continuation(mem_b, layout, cfg_b, ctx.device, fuel)
    return build_sh_context(prefix, cont_a, cont_b, layout)
