"""Byte-addressable memory, word access rules, and the protection layout.

Memory is a flat 64 KiB byte array. Words are little endian: the word at
location l is M[l+1]*256 + M[l]. Word access at 0xFFFF has no second byte and
raises AddressOverflow; callers are expected to range-check or mask first.

A layout carves out one protected code section [ts, te), one protected data
section [ds, de), an interrupt handler entry point, and reserves 0xFFFE for
the reset/exception vector.
"""

from __future__ import annotations

from dataclasses import dataclass

MEM_SIZE = 0x10000
RESET_VECTOR = 0xFFFE


class AddressOverflow(Exception):
    """Word access at 0xFFFF, which has no upper byte."""


def word_at(mem: bytes | bytearray, addr: int) -> int:
    addr &= 0xFFFF
    if addr == 0xFFFF:
        raise AddressOverflow(hex(addr))
    return mem[addr] | (mem[addr + 1] << 8)


def set_word(mem: bytearray, addr: int, w: int) -> None:
    addr &= 0xFFFF
    if addr == 0xFFFF:
        raise AddressOverflow(hex(addr))
    mem[addr] = w & 0xFF
    mem[addr + 1] = (w >> 8) & 0xFF


@dataclass(frozen=True)
class Layout:
    """Protected-region boundaries. ts is the sole enclave entry point."""

    ts: int
    te: int
    ds: int
    de: int
    isr: int

    def __post_init__(self):
        for name in ("ts", "te", "ds", "de", "isr"):
            v = getattr(self, name)
            if not 0 <= v <= 0xFFFF:
                raise ValueError(f"{name}={v:#x} out of range")
        if not (self.ts < self.te and self.ds < self.de):
            raise ValueError("empty protected section")
        code = range(self.ts, self.te)
        data = range(self.ds, self.de)
        if max(code.start, data.start) < min(code.stop, data.stop):
            raise ValueError("code and data sections overlap")
        for a in (self.isr, RESET_VECTOR, RESET_VECTOR + 1):
            if a in code or a in data:
                raise ValueError("isr/reset vector inside a protected section")

    def in_code(self, addr: int) -> bool:
        return self.ts <= addr < self.te

    def in_data(self, addr: int) -> bool:
        return self.ds <= addr < self.de

    def is_unprotected(self, addr: int) -> bool:
        return not (self.in_code(addr) or self.in_data(addr))

    def mode(self, pc: int) -> str | None:
        """'pm' in protected code, 'um' outside both sections, None in data."""
        if self.in_code(pc):
            return "pm"
        if self.in_data(pc):
            return None
        return "um"


def load_image(path: str) -> bytearray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) != MEM_SIZE:
        raise ValueError(f"image must be exactly {MEM_SIZE} bytes, got {len(data)}")
    return bytearray(data)


def save_image(path: str, mem: bytes | bytearray) -> None:
    if len(mem) != MEM_SIZE:
        raise ValueError("image must be exactly 65536 bytes")
    with open(path, "wb") as f:
        f.write(bytes(mem))


def save_sidecar(path: str, layout: Layout) -> None:
    with open(path, "w") as f:
        f.write(
            f"ts={layout.ts:#06x} te={layout.te:#06x} "
            f"ds={layout.ds:#06x} de={layout.de:#06x} isr={layout.isr:#06x}\n"
        )


def load_sidecar(path: str) -> Layout:
    with open(path) as f:
        text = f.read()
    fields: dict[str, int] = {}
    for tok in text.split():
        key, _, val = tok.partition("=")
        fields[key] = int(val, 16)
    try:
        return Layout(fields["ts"], fields["te"], fields["ds"], fields["de"], fields["isr"])
    except KeyError as e:
        raise ValueError(f"sidecar missing field {e}") from e
