"""Thumb-2 assembly subset: model, parser/emitter, IT blocks, liveness."""

from .isa import (
    Flag, ITBlockSpec, Imm, Instruction, Kind, LabelRef, Literal, Mem, RegList,
    Shifted, Sym, WB, classify_instruction, instruction_size,
)
from .program import AsmError, Data, DataBlock, Function, Label, Program
from .syntax import emit_program, parse_instruction, parse_program
from .itblock import ITError, dissolve_it_blocks, rebuild_it_blocks
from .liveness import Liveness, find_free_register

__all__ = [
    "AsmError", "Data", "DataBlock", "Flag", "Function", "ITBlockSpec", "ITError",
    "Imm", "Instruction", "Kind", "Label", "LabelRef", "Literal", "Liveness",
    "Mem", "Program", "RegList", "Shifted", "Sym", "WB", "classify_instruction",
    "dissolve_it_blocks", "emit_program", "find_free_register",
    "instruction_size", "parse_instruction", "parse_program", "rebuild_it_blocks",
]
