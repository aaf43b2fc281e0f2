"""Memory access control: the rights matrix and the per-instruction check.

Rights depend on where the previous instruction executed (inside protected
code or not) and on the byte being touched. Protected code can read and
execute itself, read and write its data section, and execute out; everything
else can only execute the entry point and use unprotected memory freely.

The check runs before an instruction's effects are applied. A failed check
aborts the instruction and resets the CPU through the exception path.
"""

from __future__ import annotations

from .isa import Instr, Op
from .memory import Layout
from .regs import PC, SP, gie

R = "r"
W = "w"
X = "x"

# region keys: entry point, protected code, protected data, everything else
_EP, _PC, _PD, _OT = range(4)

_FROM_PROT = {
    _EP: frozenset((R, X)),
    _PC: frozenset((R, X)),
    _PD: frozenset((R, W)),
    _OT: frozenset((X,)),
}
_FROM_OTHER = {
    _EP: frozenset((X,)),
    _PC: frozenset(),
    _PD: frozenset(),
    _OT: frozenset((R, W, X)),
}


def _region(layout: Layout, addr: int) -> int:
    if layout.in_code(addr):
        # The entry point is the first *word* of the code section: jumps from
        # outside land on a word-aligned pc and both bytes must be executable.
        return _EP if addr - layout.ts < 2 else _PC
    if layout.in_data(addr):
        return _PD
    return _OT


def rights(layout: Layout, from_addr: int, addr: int) -> frozenset:
    table = _FROM_PROT if layout.in_code(from_addr) else _FROM_OTHER
    return table[_region(layout, addr & 0xFFFF)]


def _allowed(layout: Layout, from_addr: int, addrs, right: str) -> bool:
    return all(right in rights(layout, from_addr, a) for a in addrs)


# Instructions checked only for executability of their own bytes.
_SIMPLE = {Op.NOP, Op.AND, Op.ADD, Op.SUB, Op.CMP, Op.MOV, Op.JMP, Op.JZ}


def _fetch_ok(layout: Layout, pcold: int, pc: int, nbytes: int) -> bool:
    """Executability of an instruction's own bytes.

    The first word is what the jump from pcold lands on; the extension word
    of a 2-word instruction is fetched once execution is already at pc, so
    it is checked from there. This is what lets a module open with a 2-word
    instruction: its extension word is plain protected code, executable from
    the entry point but not from outside.
    """
    if not _allowed(layout, pcold, (pc, pc + 1), X):
        return False
    return nbytes == 2 or _allowed(layout, pc, (pc + 2, pc + 3), X)


def mac_ok(i: Instr, pcold: int, regs: tuple, backup, layout: Layout) -> bool:
    """Access check for instruction i about to run at regs[PC].

    `backup` is the interrupt backup slot: while it is occupied (handler
    running), only interrupt-disabled code that stays away from the enclave
    entry point may execute, and RETI is always allowed.
    """
    pc = regs[PC]
    if backup is not None:
        if i.op is Op.RETI:
            return True
        return mac_ok(i, pcold, regs, None, layout) and not gie(regs) and pc != layout.ts

    if i.op is Op.RETI:
        sp = regs[SP]
        if sp == 0xFFFF or (sp + 2) & 0xFFFF == 0xFFFF:
            return False
        stack = [(sp + k) & 0xFFFF for k in range(4)]
        return _allowed(layout, pcold, (pc, pc + 1), X) and _allowed(layout, pc, stack, R)

    if i.op in _SIMPLE:
        return _fetch_ok(layout, pcold, pc, 2)

    if i.op in (Op.NOT, Op.MOVI):
        return _fetch_ok(layout, pcold, pc, 4)

    if i.op in (Op.IN, Op.OUT):
        return layout.mode(pc) == "um" and _fetch_ok(layout, pcold, pc, 2)

    if i.op is Op.MOVL:
        a = regs[i.r1]
        if a == 0xFFFF or (a + 1) & 0xFFFF == 0xFFFF:
            return False
        return _allowed(layout, pc, (a, a + 1), R) and _fetch_ok(layout, pcold, pc, 2)

    if i.op is Op.MOVS:
        a = regs[i.r2]
        if a == 0xFFFF or (a + 1) & 0xFFFF == 0xFFFF:
            return False
        return _allowed(layout, pc, (a, a + 1), W) and _fetch_ok(layout, pcold, pc, 4)

    raise ValueError(f"no access rule for {i.op}")
