"""Small two-pass assembler producing raw memory images plus a layout.

Directives:
    .org <addr>            set the location counter
    .word <value>          emit one literal word (value or label)
    .section code|data|unprot   tag following bytes for layout validation
    .layout ts te ds de isr     protected-region boundaries (values or labels)
    .resetvec <target>     word stored at 0xFFFE

Instructions use source-first operand order (e.g. `SUB r13, r13` computes
r1 - r2 into r2; `MOVS r14, r10` stores r14 at the address in r10; `MOVI
value, r4` loads an immediate). Commas are optional. `;` and `#` start
comments. Labels end with a colon and may share a line with code.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import Instr, Op, encode
from .memory import MEM_SIZE, RESET_VECTOR, Layout, set_word

_REG_ALIASES = {"pc": 0, "sp": 1, "sr": 2}
_LABEL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class AsmError(Exception):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass
class _Item:
    lineno: int
    addr: int
    section: str
    kind: str  # 'instr' | 'word'
    op: Op | None = None
    operands: list = field(default_factory=list)
    value: str = ""


def _parse_reg(tok: str):
    t = tok.lower()
    if t in _REG_ALIASES:
        return _REG_ALIASES[t]
    if t.startswith("r") and t[1:].isdigit():
        n = int(t[1:])
        if 0 <= n < 16:
            return n
    return None


def _split_operands(rest: str) -> list[str]:
    rest = rest.replace(",", " ")
    return rest.split()


class Assembler:
    def __init__(self):
        self.labels: dict[str, int] = {}
        self.items: list[_Item] = []
        self.layout_spec = None  # (lineno, [5 tokens])
        self.resetvec_spec = None  # (lineno, token)

    # pass 1: addresses and labels
    def _scan(self, text: str) -> None:
        addr = 0
        section = "unprot"
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = re.split(r"[;#]", raw, 1)[0].strip()
            while line:
                head, _, rest = line.partition(" ")
                if head.endswith(":"):
                    name = head[:-1]
                    if not _LABEL_RE.match(name):
                        raise AsmError(lineno, f"bad label {name!r}")
                    if name in self.labels:
                        raise AsmError(lineno, f"duplicate label {name!r}")
                    self.labels[name] = addr
                    line = rest.strip()
                    continue
                break
            if not line:
                continue
            head, _, rest = line.partition(" ")
            head_l = head.lower()
            rest = rest.strip()
            if head_l == ".org":
                addr = self._int_or_fail(rest, lineno)
            elif head_l == ".section":
                if rest not in ("code", "data", "unprot"):
                    raise AsmError(lineno, "section must be code, data or unprot")
                section = rest
            elif head_l == ".layout":
                toks = _split_operands(rest)
                if len(toks) != 5:
                    raise AsmError(lineno, ".layout takes ts te ds de isr")
                self.layout_spec = (lineno, toks)
            elif head_l == ".resetvec":
                self.resetvec_spec = (lineno, rest)
            elif head_l == ".word":
                toks = _split_operands(rest)
                if not toks:
                    raise AsmError(lineno, ".word needs a value")
                for tok in toks:
                    self.items.append(_Item(lineno, addr, section, "word", value=tok))
                    addr += 2
            else:
                op = self._op_for(head_l, lineno)
                operands = _split_operands(rest)
                item = _Item(lineno, addr, section, "instr", op=op, operands=operands)
                self.items.append(item)
                addr += 4 if op in (Op.NOT, Op.MOVS, Op.MOVI) else 2
            if addr > MEM_SIZE:
                raise AsmError(lineno, "assembled past end of memory")

    def _op_for(self, name: str, lineno: int) -> Op:
        try:
            return Op[name.upper()]
        except KeyError:
            raise AsmError(lineno, f"unknown mnemonic {name!r}") from None

    def _int_or_fail(self, tok: str, lineno: int) -> int:
        v = self._value(tok, lineno, allow_label=False)
        return v

    def _value(self, tok: str, lineno: int, allow_label: bool = True) -> int:
        tok = tok.strip()
        try:
            return int(tok, 0) & 0xFFFF
        except ValueError:
            pass
        if allow_label and tok in self.labels:
            return self.labels[tok]
        raise AsmError(lineno, f"cannot resolve value {tok!r}")

    def _build_instr(self, item: _Item) -> Instr:
        op = item.op
        ops = item.operands
        ln = item.lineno

        def reg(tok):
            r = _parse_reg(tok)
            if r is None:
                raise AsmError(ln, f"expected register, got {tok!r}")
            return r

        if op in (Op.RETI, Op.NOP, Op.HLT):
            if ops:
                raise AsmError(ln, f"{op.name} takes no operands")
            return Instr(op)
        if op in (Op.NOT, Op.IN, Op.OUT, Op.JMP, Op.JZ):
            if len(ops) != 1:
                raise AsmError(ln, f"{op.name} takes one register")
            return Instr(op, 0, reg(ops[0]))
        if op is Op.MOVI:
            if len(ops) != 2:
                raise AsmError(ln, "MOVI takes a value and a register")
            return Instr(op, 0, reg(ops[1]), imm=self._value(ops[0], ln))
        if len(ops) != 2:
            raise AsmError(ln, f"{op.name} takes two registers")
        return Instr(op, reg(ops[0]), reg(ops[1]))

    # pass 2: emit
    def assemble(self, text: str):
        self._scan(text)
        image = bytearray(MEM_SIZE)
        written: dict[int, int] = {}  # addr -> lineno, double-write guard
        sections: dict[int, str] = {}

        def emit(addr: int, data: bytes, lineno: int, section: str):
            if addr + len(data) > MEM_SIZE:
                raise AsmError(lineno, "emit past end of memory")
            for off, b in enumerate(data):
                a = addr + off
                if a in written:
                    raise AsmError(lineno, f"address {a:#06x} written twice "
                                           f"(first at line {written[a]})")
                written[a] = lineno
                sections[a] = section
                image[a] = b

        for item in self.items:
            if item.kind == "word":
                w = self._value(item.value, item.lineno)
                emit(item.addr, bytes((w & 0xFF, w >> 8)), item.lineno, item.section)
            else:
                emit(item.addr, encode(self._build_instr(item)), item.lineno, item.section)

        if self.layout_spec is None:
            raise AsmError(0, "missing .layout directive")
        ln, toks = self.layout_spec
        vals = [self._value(t, ln) for t in toks]
        try:
            layout = Layout(*vals)
        except ValueError as e:
            raise AsmError(ln, f"bad layout: {e}") from None

        if self.resetvec_spec is not None:
            ln, tok = self.resetvec_spec
            if RESET_VECTOR in written:
                raise AsmError(ln, "reset vector written twice")
            set_word(image, RESET_VECTOR, self._value(tok, ln))

        for a, sec in sections.items():
            if sec == "code" and not layout.in_code(a):
                raise AsmError(written[a], f"code byte at {a:#06x} outside [ts, te)")
            if sec == "data" and not layout.in_data(a):
                raise AsmError(written[a], f"data byte at {a:#06x} outside [ds, de)")
            if sec == "unprot" and not layout.is_unprotected(a):
                raise AsmError(written[a], f"unprotected byte at {a:#06x} inside "
                                           "a protected section")
        return image, layout, dict(self.labels)


def assemble(text: str):
    """Assemble source text: returns (image, layout, labels)."""
    return Assembler().assemble(text)


def assemble_file(path: str):
    with open(path) as f:
        return assemble(f.read())
