"""Register file conventions and the masked write rules.

Sixteen 16-bit registers. r0 is the program counter, r1 the stack pointer,
r2 the status register. pc and sp can never hold odd values; the low bit is
dropped on every write. The status register's interrupt-enable bit is frozen
while executing inside protected code, so enclave code cannot toggle
interruptibility on the attacker's behalf.
"""

from __future__ import annotations

PC = 0
SP = 1
SR = 2
NUM_REGS = 16

# Status register bits.
SR_C = 1 << 0
SR_Z = 1 << 1
SR_N = 1 << 2
SR_GIE = 1 << 3
SR_V = 1 << 8
FLAG_MASK = SR_C | SR_Z | SR_N | SR_V

Regs = tuple

R0: Regs = tuple([0] * NUM_REGS)


def rinit(reset_pc: int) -> Regs:
    """Power-on registers: pc from the reset vector, GIE enabled."""
    r = [0] * NUM_REGS
    r[PC] = reset_pc & 0xFFFE
    r[SP] = 0
    r[SR] = SR_GIE
    return tuple(r)


def gie(regs: Regs) -> bool:
    return bool(regs[SR] & SR_GIE)


def zbit(regs: Regs) -> bool:
    return bool(regs[SR] & SR_Z)


def write_reg(regs: Regs, idx: int, value: int, in_pm: bool) -> Regs:
    """One register write with the architectural masks applied."""
    value &= 0xFFFF
    if idx in (PC, SP):
        value &= 0xFFFE
    elif idx == SR and in_pm:
        value = (value & ~SR_GIE) | (regs[SR] & SR_GIE)
    out = list(regs)
    out[idx] = value
    return tuple(out)


def write_flags(regs: Regs, n: bool, z: bool, c: bool, v: bool, in_pm: bool) -> Regs:
    """Set N/Z/C/V, leaving the other status bits (GIE included) alone."""
    sr = regs[SR] & ~FLAG_MASK
    if n:
        sr |= SR_N
    if z:
        sr |= SR_Z
    if c:
        sr |= SR_C
    if v:
        sr |= SR_V
    return write_reg(regs, SR, sr, in_pm)
