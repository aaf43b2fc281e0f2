"""Machine configurations and the cycle-accurate step function.

A configuration carries the interrupt backup slot, the device state, the
global cycle count, the pending-interrupt arrival time, the register file,
and the address of the previously executed instruction (which decides the
protection mode every access check runs under).

Four interrupt-handling policies share this step function:

* ``ATOMIC``   never dispatches; protected code runs to completion.
* ``PADDED``   dispatches with padding so that both the dispatch latency and
  the resume timing are independent of the interrupted instruction, and
  restores registers from a hardware backup.
* ``NAIVE``    dispatches at the next instruction boundary with no padding
  and leaks the live register file to the handler (only sr is cleared).
  Kept as an insecure baseline; never use it to protect anything.
* ``CONST_LATENCY`` pads the dispatch like PADDED but resumes without the
  compensating tail padding. Also insecure; also a baseline.

The step order is fixed: pending tail padding resolves first; undecodable
instructions reset the CPU with no time passing; HLT needs no access check;
a failed access check burns the instruction's cycles and resets; RETI has
its own family of cases; everything else executes, advances the device by
its cycle cost, and then runs the policy's interrupt check.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Union

from .device import Device, StuckConfiguration, dwrap
from .isa import MAX_TIME, Instr, Op, decode
from .mac import mac_ok
from .memory import RESET_VECTOR, Layout, set_word, word_at
from .regs import PC, R0, SP, SR, Regs, gie, rinit, write_flags, write_reg, zbit


class Policy(Enum):
    ATOMIC = "sh"
    PADDED = "sl"
    NAIVE = "naive"
    CONST_LATENCY = "constlat"


@dataclass(frozen=True)
class FullBackup:
    """Snapshot taken when an interrupt lands in protected code: the whole
    register file, the previous-instruction address, and the tail padding
    owed at resume. Software can never observe its contents."""

    regs: Regs
    pcold: int
    t_pad: int


@dataclass(frozen=True)
class PadBackup:
    """Registers already restored; t_pad cycles of tail padding still owed."""

    t_pad: int


Backup = Union[FullBackup, PadBackup, None]


@dataclass(frozen=True)
class Config:
    backup: Backup
    dev_state: int
    t: int
    t_arr: Optional[int]
    regs: Regs
    pcold: int
    halted: bool = False


@dataclass
class Machine:
    mem: bytearray
    layout: Layout
    device: Device
    policy: Policy
    cfg: Config


def initial_config(mem: bytes | bytearray, device: Device) -> Config:
    return Config(
        backup=None,
        dev_state=getattr(device, "initial", 0),
        t=0,
        t_arr=None,
        regs=rinit(word_at(mem, RESET_VECTOR)),
        pcold=RESET_VECTOR,
    )


def make_machine(mem: bytearray, layout: Layout, device: Device, policy: Policy) -> Machine:
    return Machine(mem, layout, device, policy, initial_config(mem, device))


def exconf(m: Machine, dev_state: int, t: int) -> Config:
    """Exception path: registers cleared, pc reloaded from the reset vector,
    backup and pending interrupt dropped. Memory and device state stay."""
    r = write_reg(R0, PC, word_at(m.mem, RESET_VECTOR), False)
    return Config(None, dev_state, t, None, r, RESET_VECTOR)


def _set_regs(regs: Regs, updates: dict[int, int], in_pm: bool) -> Regs:
    for idx, val in updates.items():
        regs = write_reg(regs, idx, val, in_pm)
    return regs


def _interrupt_check(m: Machine, backup: Backup, regs: Regs, pcold: int,
                     s: int, t: int, ta: Optional[int]):
    """The policy's end-of-step interrupt logic.

    Returns (backup, regs, dev_state, t, t_arr). May push to the stack in
    unprotected mode. Identity when nothing is pending, interrupts are
    disabled, or the policy ignores them.
    """
    if m.policy is Policy.ATOMIC:
        return backup, regs, s, t, ta
    if ta is None or not gie(regs):
        return backup, regs, s, t, ta
    md = m.layout.mode(pcold)
    if md == "um":
        # Boundary dispatch from unprotected code: pc and sr go to the
        # stack, the handler starts with interrupts off. An arrival during
        # the six dispatch cycles becomes the new pending request.
        sp = regs[SP]
        set_word(m.mem, (sp - 2) & 0xFFFF, regs[PC])
        set_word(m.mem, (sp - 4) & 0xFFFF, regs[SR])
        r = _set_regs(regs, {PC: m.layout.isr, SR: 0, SP: sp - 4}, in_pm=False)
        s, t, ta2 = dwrap(m.device, s, t, None, 6)
        return backup, r, s, t, ta2
    if md == "pm":
        if m.policy is Policy.NAIVE:
            b = FullBackup(regs, pcold, 0)
            r = _set_regs(regs, {PC: m.layout.isr, SR: 0}, in_pm=False)
            s, t, ta2 = dwrap(m.device, s, t, None, 6)
            return b, r, s, t, ta2
        # Padded dispatch: stretch to the constant MAX_TIME+6 and remember
        # the consumed part for the resume tail. Arrivals during the whole
        # stretched dispatch are discarded.
        delta = t - ta
        k = max(0, MAX_TIME - delta)
        b = FullBackup(regs, pcold, min(MAX_TIME, delta))
        r = write_reg(R0, PC, m.layout.isr, False)
        s, t, _ = dwrap(m.device, s, t, None, 6 + k)
        return b, r, s, t, None
    # Previous instruction ran from the data section: no dispatch rule.
    return backup, regs, s, t, ta


def _reti(m: Machine, c: Config) -> Config:
    pc = c.regs[PC]
    if c.backup is None:
        # Plain return: pop sr then pc from the stack (grows downward).
        sp = c.regs[SP]
        in_pm = m.layout.in_code(pc)
        r = _set_regs(
            c.regs,
            {PC: word_at(m.mem, (sp + 2) & 0xFFFF), SR: word_at(m.mem, sp), SP: sp + 4},
            in_pm,
        )
        s, t, ta = dwrap(m.device, c.dev_state, c.t, c.t_arr, 5)
        return Config(None, s, t, ta, r, pc)

    if m.policy is Policy.NAIVE:
        # No padding machinery: burn the return cycles and resume directly.
        s, t, ta = dwrap(m.device, c.dev_state, c.t, c.t_arr, 5)
        return Config(None, s, t, ta, c.backup.regs, c.backup.pcold)

    s, t, ta = dwrap(m.device, c.dev_state, c.t, c.t_arr, 5)
    if gie(c.regs) and ta is not None:
        # Another request arrived while unwinding: dispatch from here,
        # keeping the original backup so the enclave still resumes later.
        nb, r, s, t, ta = _interrupt_check(m, c.backup, c.regs, pc, s, t, ta)
        return Config(nb, s, t, ta, r, pc)
    t_pad = c.backup.t_pad if m.policy is Policy.PADDED else 0
    return Config(PadBackup(t_pad), s, t, ta, c.backup.regs, c.backup.pcold)


def _execute(m: Machine, c: Config, i: Instr) -> Config:
    lay = m.layout
    pc = c.regs[PC]
    in_pm = lay.in_code(pc)
    regs = c.regs
    s = c.dev_state
    nxt = (pc + i.size_bytes) & 0xFFFF
    op = i.op

    if op is Op.NOP:
        r = write_reg(regs, PC, nxt, in_pm)
    elif op is Op.MOV:
        r = _set_regs(regs, {PC: nxt}, in_pm)
        r = write_reg(r, i.r2, regs[i.r1], in_pm)
    elif op is Op.MOVI:
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, i.imm, in_pm)
    elif op is Op.MOVL:
        w = word_at(m.mem, regs[i.r1])
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, w, in_pm)
    elif op is Op.MOVS:
        set_word(m.mem, regs[i.r2], regs[i.r1])
        r = write_reg(regs, PC, nxt, in_pm)
    elif op is Op.NOT:
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, ~regs[i.r2], in_pm)
    elif op is Op.JMP:
        r = write_reg(regs, PC, regs[i.r2], in_pm)
    elif op is Op.JZ:
        r = write_reg(regs, PC, regs[i.r2] if zbit(regs) else nxt, in_pm)
    elif op is Op.IN:
        got = m.device.read(s)
        if got is None:
            raise StuckConfiguration(f"no read enabled at device state {s}")
        w, s = got
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, w, in_pm)
    elif op is Op.OUT:
        s = m.device.write(s, regs[i.r2])
        r = write_reg(regs, PC, nxt, in_pm)
    elif op is Op.AND:
        res = regs[i.r1] & regs[i.r2]
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, res, in_pm)
        r = write_flags(r, n=bool(res & 0x8000), z=res == 0, c=res != 0, v=False, in_pm=in_pm)
    elif op is Op.ADD:
        a, b = regs[i.r1], regs[i.r2]
        full = a + b
        res = full & 0xFFFF
        v = bool(~(a ^ b) & (a ^ res) & 0x8000)
        r = write_reg(regs, PC, nxt, in_pm)
        r = write_reg(r, i.r2, res, in_pm)
        r = write_flags(r, n=bool(res & 0x8000), z=res == 0, c=full > 0xFFFF, v=v, in_pm=in_pm)
    elif op in (Op.SUB, Op.CMP):
        a, b = regs[i.r1], regs[i.r2]
        res = (a - b) & 0xFFFF
        v = bool((a ^ b) & (a ^ res) & 0x8000)
        r = write_reg(regs, PC, nxt, in_pm)
        if op is Op.SUB:
            r = write_reg(r, i.r2, res, in_pm)
        r = write_flags(r, n=bool(res & 0x8000), z=res == 0, c=a >= b, v=v, in_pm=in_pm)
    else:  # pragma: no cover
        raise ValueError(f"unhandled op {op}")

    s, t, ta = dwrap(m.device, s, c.t, c.t_arr, i.cycles)
    nb, r, s, t, ta = _interrupt_check(m, c.backup, r, pc, s, t, ta)
    return Config(nb, s, t, ta, r, pc)


def step(m: Machine) -> Config:
    """Advance one step. Sets and returns the new configuration."""
    c = m.cfg
    if c.halted:
        return c

    if isinstance(c.backup, PadBackup):
        # Tail padding owed from a handled interrupt. Interruptible: a
        # pending request dispatches again right after the padding.
        s, t, ta = dwrap(m.device, c.dev_state, c.t, c.t_arr, c.backup.t_pad)
        nb, r, s, t, ta = _interrupt_check(m, None, c.regs, c.pcold, s, t, ta)
        nc = Config(nb, s, t, ta, r, c.pcold)
        m.cfg = nc
        return nc

    pc = c.regs[PC]
    i = decode(m.mem, pc)
    if i is None:
        nc = exconf(m, c.dev_state, c.t)
        m.cfg = nc
        return nc

    if i.op is Op.HLT:
        if m.layout.in_code(pc):
            s, t, _ = dwrap(m.device, c.dev_state, c.t, c.t_arr, 1)
            nc = exconf(m, s, t)
        else:
            nc = replace(c, halted=True)
        m.cfg = nc
        return nc

    if not mac_ok(i, c.pcold, c.regs, c.backup, m.layout):
        s, t, _ = dwrap(m.device, c.dev_state, c.t, c.t_arr, i.cycles)
        nc = exconf(m, s, t)
        m.cfg = nc
        return nc

    if i.op is Op.RETI:
        nc = _reti(m, c)
    else:
        nc = _execute(m, c, i)
    m.cfg = nc
    return nc


# --- checkpoint records ---------------------------------------------------
#
# Fixed-size binary layout, little endian:
#   8s    magic "ENCLV01\0"
#   5H    layout ts te ds de isr
#   B     policy (index into _POLICY_ORDER)
#   q     device state
#   Q     cycle count t
#   B Q   pending flag, pending arrival time
#   16H   registers
#   H     pcold
#   B     halted
#   B     backup tag (0 none, 1 full, 2 pad)
#   16H H H  full-backup registers, pcold, t_pad (zeros unless tag=1)
#   H     pad-backup t_pad (zero unless tag=2)
#   65536s memory

_CKPT = struct.Struct("<8s5HBqQBQ16HHBB16HHHH65536s")
_MAGIC = b"ENCLV01\0"
_POLICY_ORDER = [Policy.ATOMIC, Policy.PADDED, Policy.NAIVE, Policy.CONST_LATENCY]


def save_checkpoint(path: str, m: Machine) -> None:
    c = m.cfg
    tag = 0
    fb_regs = [0] * 16
    fb_pcold = fb_tpad = pb_tpad = 0
    if isinstance(c.backup, FullBackup):
        tag = 1
        fb_regs = list(c.backup.regs)
        fb_pcold = c.backup.pcold
        fb_tpad = c.backup.t_pad
    elif isinstance(c.backup, PadBackup):
        tag = 2
        pb_tpad = c.backup.t_pad
    blob = _CKPT.pack(
        _MAGIC,
        m.layout.ts, m.layout.te, m.layout.ds, m.layout.de, m.layout.isr,
        _POLICY_ORDER.index(m.policy),
        c.dev_state,
        c.t,
        0 if c.t_arr is None else 1,
        c.t_arr or 0,
        *c.regs,
        c.pcold,
        1 if c.halted else 0,
        tag,
        *fb_regs,
        fb_pcold,
        fb_tpad,
        pb_tpad,
        bytes(m.mem),
    )
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path: str, device: Device) -> Machine:
    with open(path, "rb") as f:
        blob = f.read()
    fields = _CKPT.unpack(blob)
    if fields[0] != _MAGIC:
        raise ValueError("not a checkpoint file")
    (ts, te, ds, de, isr) = fields[1:6]
    policy = _POLICY_ORDER[fields[6]]
    dev_state = fields[7]
    t = fields[8]
    t_arr = fields[10] if fields[9] else None
    regs = tuple(fields[11:27])
    pcold = fields[27]
    halted = bool(fields[28])
    tag = fields[29]
    backup: Backup = None
    if tag == 1:
        backup = FullBackup(tuple(fields[30:46]), fields[46], fields[47])
    elif tag == 2:
        backup = PadBackup(fields[48])
    mem = bytearray(fields[49])
    layout = Layout(ts, te, ds, de, isr)
    cfg = Config(backup, dev_state, t, t_arr, regs, pcold, halted)
    return Machine(mem, layout, device, policy, cfg)
