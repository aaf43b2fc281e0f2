"""Cycle-accurate simulator for a small enclave-enabled machine.

The machine has a 64KiB byte-addressable memory with one protected code
section and one protected data section, a 16-register file, a 16-instruction
set, and a single memory-mapped device that can raise interrupt requests.
Four interrupt-handling policies are provided: an uninterruptible reference,
a secure padded interruptible design, and two insecure strawmen.

Entry points:

* ``asm.assemble`` / ``cli`` ``sim asm``: build memory images;
* ``cpu.make_machine`` + ``traces.run_machine``: run and observe;
* ``scenario.run_scenario``: compare attacker-visible probes across secrets;
* ``equiv.find_distinguisher``: search for a context telling two protected
  modules apart and backtranslate the divergence to the uninterruptible
  policy.
"""

from .asm import AsmError, assemble, assemble_file
from .cpu import (
    Config,
    FullBackup,
    Machine,
    PadBackup,
    Policy,
    load_checkpoint,
    make_machine,
    save_checkpoint,
    step,
)
from .device import (
    Schedule,
    StuckConfiguration,
    TableDevice,
    Timer,
    UnrollTooLarge,
    dwrap,
    limit_interrupts,
    load_device_script,
    strip_interrupts,
)
from .equiv import (
    AnchorCollision,
    BacktranslationError,
    Module,
    Verdict,
    compose,
    converges,
    find_distinguisher,
    load_module,
    make_search_contexts,
)
from .isa import MAX_TIME, Instr, Op, decode, encode
from .memory import AddressOverflow, Layout, load_image, load_sidecar, save_image, save_sidecar
from .regs import rinit
from .scenario import load_scenario, run_scenario
from .traces import coarse_trace, dump_fine, equal_up_to_timings, run_machine

__version__ = "0.1.0"

__all__ = [
    "AsmError",
    "AddressOverflow",
    "AnchorCollision",
    "BacktranslationError",
    "Config",
    "FullBackup",
    "Instr",
    "Layout",
    "MAX_TIME",
    "Machine",
    "Module",
    "Op",
    "PadBackup",
    "Policy",
    "Schedule",
    "StuckConfiguration",
    "TableDevice",
    "Timer",
    "UnrollTooLarge",
    "Verdict",
    "assemble",
    "assemble_file",
    "coarse_trace",
    "compose",
    "converges",
    "decode",
    "dump_fine",
    "dwrap",
    "encode",
    "equal_up_to_timings",
    "find_distinguisher",
    "limit_interrupts",
    "load_checkpoint",
    "load_device_script",
    "load_image",
    "load_module",
    "load_scenario",
    "load_sidecar",
    "make_machine",
    "make_search_contexts",
    "rinit",
    "run_machine",
    "run_scenario",
    "save_checkpoint",
    "save_image",
    "save_sidecar",
    "step",
    "strip_interrupts",
]
