"""Instruction set: opcodes, cycle/size tables, binary encoding.

The machine is a 16-bit word machine with sixteen registers. Instructions
occupy one or two words. Word zero packs an opcode byte in the high byte and
two register nibbles in the low byte; the optional second word carries the
immediate for MOVI and is 0x0000 filler for the other two-word forms (kept so
instruction sizes stay fixed and the cycle table stays honest).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Op(Enum):
    RETI = 0x01
    NOP = 0x02
    HLT = 0x03
    NOT = 0x04
    IN = 0x05
    OUT = 0x06
    AND = 0x07
    JMP = 0x08
    JZ = 0x09
    MOV = 0x0A
    MOVL = 0x0B
    MOVS = 0x0C
    MOVI = 0x0D
    ADD = 0x0E
    SUB = 0x0F
    CMP = 0x10


# Execution cost in cycles and instruction length in words. These two tables
# define the timing model; everything cycle-accurate hangs off them.
CYCLES: dict[Op, int] = {
    Op.RETI: 5,
    Op.NOP: 1,
    Op.HLT: 1,
    Op.NOT: 2,
    Op.IN: 2,
    Op.OUT: 2,
    Op.AND: 1,
    Op.JMP: 2,
    Op.JZ: 2,
    Op.MOV: 1,
    Op.MOVL: 2,
    Op.MOVS: 4,
    Op.MOVI: 2,
    Op.ADD: 1,
    Op.SUB: 1,
    Op.CMP: 1,
}

SIZE_WORDS: dict[Op, int] = {
    Op.RETI: 1,
    Op.NOP: 1,
    Op.HLT: 1,
    Op.NOT: 2,
    Op.IN: 1,
    Op.OUT: 1,
    Op.AND: 1,
    Op.JMP: 1,
    Op.JZ: 1,
    Op.MOV: 1,
    Op.MOVL: 1,
    Op.MOVS: 2,
    Op.MOVI: 2,
    Op.ADD: 1,
    Op.SUB: 1,
    Op.CMP: 1,
}

# Longest instruction, in cycles. Used as the padding bound by the
# interruptible execution model.
MAX_TIME = 6

# Instructions whose only operand lives in the r2 nibble.
ONE_REG = {Op.NOT, Op.IN, Op.OUT, Op.JMP, Op.JZ}
TWO_REG = {Op.AND, Op.MOV, Op.MOVL, Op.MOVS, Op.ADD, Op.SUB, Op.CMP}
NO_REG = {Op.RETI, Op.NOP, Op.HLT}


@dataclass(frozen=True)
class Instr:
    op: Op
    r1: int = 0
    r2: int = 0
    imm: int = 0

    @property
    def cycles(self) -> int:
        return CYCLES[self.op]

    @property
    def size_words(self) -> int:
        return SIZE_WORDS[self.op]

    @property
    def size_bytes(self) -> int:
        return SIZE_WORDS[self.op] * 2


_BY_CODE = {op.value: op for op in Op}


def encode(i: Instr) -> bytes:
    """Encode to 2 or 4 little-endian bytes."""
    w0 = (i.op.value << 8) | ((i.r1 & 0xF) << 4) | (i.r2 & 0xF)
    out = bytes((w0 & 0xFF, w0 >> 8))
    if SIZE_WORDS[i.op] == 2:
        w1 = i.imm & 0xFFFF if i.op is Op.MOVI else 0x0000
        out += bytes((w1 & 0xFF, w1 >> 8))
    return out


def decode(mem: bytes | bytearray, addr: int) -> Instr | None:
    """Decode the instruction at addr, or None if the bytes are not one.

    Never reads past the instruction's own size, and refuses anything that
    would run off the end of the address space.
    """
    if addr < 0 or addr + 1 > 0xFFFF:
        return None
    w0 = mem[addr] | (mem[addr + 1] << 8)
    op = _BY_CODE.get(w0 >> 8)
    if op is None:
        return None
    r1 = (w0 >> 4) & 0xF
    r2 = w0 & 0xF
    imm = 0
    if SIZE_WORDS[op] == 2:
        if addr + 3 > 0xFFFF:
            return None
        if op is Op.MOVI:
            imm = mem[addr + 2] | (mem[addr + 3] << 8)
        # NOT and MOVS carry a filler word; its value is ignored.
    if op in NO_REG:
        r1 = r2 = 0
    elif op in ONE_REG or op is Op.MOVI:
        r1 = 0
    return Instr(op, r1, r2, imm)
