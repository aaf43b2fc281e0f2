"""Assembler: addressing, labels, operand conventions, and rejection paths."""

import pytest

from enclavesim.asm import AsmError, assemble
from enclavesim.isa import Instr, Op, decode
from enclavesim.memory import RESET_VECTOR, word_at

MINIMAL = """
        .layout 0x8000 0x8004 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        NOP
"""


def test_minimal_program():
    image, layout, labels = assemble(MINIMAL)
    assert (layout.ts, layout.te, layout.ds, layout.de, layout.isr) == (
        0x8000, 0x8004, 0x9000, 0x9002, 0x0400,
    )
    assert decode(image, 0x8000) == Instr(Op.NOP)
    assert labels == {}


def test_missing_layout_is_an_error():
    with pytest.raises(AsmError, match="layout"):
        assemble("        NOP\n")


def test_labels_resolve_forward_and_backward():
    src = """
        .layout a b 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
a:      MOVI b r4
        JMP r4
b:
        .section unprot
        NOP
"""
    image, layout, labels = assemble(src)
    assert labels["a"] == 0x8000
    assert labels["b"] == 0x8006  # 4-byte MOVI + 2-byte JMP
    assert layout.ts == 0x8000 and layout.te == 0x8006
    assert decode(image, 0x8000).imm == 0x8006


def test_label_on_its_own_line_and_shared_line():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .org 0x1000
alone:
shared: NOP
        .section code
        .org 0x8000
        NOP
"""
    _, _, labels = assemble(src)
    assert labels["alone"] == labels["shared"] == 0x1000


def test_duplicate_label_rejected():
    src = MINIMAL + "x:\nx:\n"
    with pytest.raises(AsmError, match="duplicate"):
        assemble(src)


def test_operand_order_source_first():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        .section unprot
        .org 0x1000
        SUB r13 r3
        MOVS r14 r10
        MOVL r9 r5
        MOVI 0x55aa r4
"""
    image, _, _ = assemble(src)
    assert decode(image, 0x1000) == Instr(Op.SUB, 13, 3)  # r3 <- r13 - r3
    assert decode(image, 0x1002) == Instr(Op.MOVS, 14, 10)  # M[r10] <- r14
    assert decode(image, 0x1006) == Instr(Op.MOVL, 9, 5)  # r5 <- M[r9]
    assert decode(image, 0x1008) == Instr(Op.MOVI, 0, 4, imm=0x55AA)


def test_register_aliases_and_commas():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        .section unprot
        .org 0x1000
        MOV pc, r4
        MOV sp,r5
        MOV sr , r6
"""
    image, _, _ = assemble(src)
    assert decode(image, 0x1000) == Instr(Op.MOV, 0, 4)
    assert decode(image, 0x1002) == Instr(Op.MOV, 1, 5)
    assert decode(image, 0x1004) == Instr(Op.MOV, 2, 6)


def test_word_directive_emits_values_and_labels():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9006 0x0400
        .section code
        .org 0x8000
here:   NOP
        .section data
        .org 0x9000
        .word 0xbeef, 17
        .word here
"""
    image, _, _ = assemble(src)
    assert word_at(image, 0x9000) == 0xBEEF
    assert word_at(image, 0x9002) == 17
    assert word_at(image, 0x9004) == 0x8000


def test_resetvec_is_optional_and_settable():
    image, _, _ = assemble(MINIMAL)
    assert word_at(image, RESET_VECTOR) == 0
    image, _, _ = assemble(MINIMAL + "        .resetvec 0x8000\n")
    assert word_at(image, RESET_VECTOR) == 0x8000


def test_resetvec_conflicts_with_an_explicit_word():
    src = MINIMAL + """
        .org 0xfffe
        .word 0x1234
        .resetvec 0x8000
"""
    with pytest.raises(AsmError, match="reset vector"):
        assemble(src)


def test_double_write_guard():
    src = MINIMAL + """
        .org 0x8000
        NOP
"""
    with pytest.raises(AsmError, match="written twice"):
        assemble(src)


def test_section_bounds_are_enforced():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        NOP
"""
    with pytest.raises(AsmError, match="outside"):
        assemble(src)
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        .section data
        .org 0x9100
        .word 1
"""
    with pytest.raises(AsmError, match="outside"):
        assemble(src)
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
        NOP
        .section unprot
        .org 0x9000
        .word 1
"""
    with pytest.raises(AsmError, match="inside"):
        assemble(src)


@pytest.mark.parametrize(
    "line,msg",
    [
        ("FOO r1", "unknown mnemonic"),
        ("NOP r1", "no operands"),
        ("JMP r1 r2", "one register"),
        ("JMP r16", "expected register"),
        ("MOVI r1", "value and a register"),
        ("ADD r1", "two registers"),
        ("MOVI nowhere r1", "cannot resolve"),
        (".section text", "code, data or unprot"),
        (".layout 1 2 3", "ts te ds de isr"),
        (".word", "needs a value"),
    ],
)
def test_malformed_lines(line, msg):
    with pytest.raises(AsmError, match=msg):
        assemble(MINIMAL + "        " + line + "\n")


def test_errors_carry_the_line_number():
    src = MINIMAL + "        FOO r1\n"
    with pytest.raises(AsmError) as info:
        assemble(src)
    assert info.value.lineno == src.count("\n")
    assert "line" in str(info.value)


def test_layout_mixes_labels_and_numbers():
    src = """
        .layout start finish 0x9000 0x9002 0x0400
        .section code
        .org 0x8000
start:  NOP
finish:
"""
    _, layout, _ = assemble(src)
    assert (layout.ts, layout.te) == (0x8000, 0x8002)


def test_bad_layout_is_reported_at_the_directive():
    src = """
        .layout 0x8000 0x8000 0x9000 0x9002 0x0400
        .section code
"""
    with pytest.raises(AsmError, match="bad layout"):
        assemble(src)


def test_assembling_past_end_of_memory():
    src = MINIMAL + """
        .org 0xfffe
        MOVI 1 r1
"""
    with pytest.raises(AsmError, match="end of memory"):
        assemble(src)


def test_comment_styles():
    src = """
        .layout 0x8000 0x8002 0x9000 0x9002 0x0400   ; trailing comment
        # full-line comment
        .section code
        .org 0x8000
        NOP          # other style
"""
    image, _, _ = assemble(src)
    assert decode(image, 0x8000) == Instr(Op.NOP)
