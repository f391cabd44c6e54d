"""Small instruction builders shared by the passes."""

from __future__ import annotations

from typing import List

from ..asm.isa import Flag, Imm, Instruction, Mem, Shifted, is_modified_immediate


class PassError(Exception):
    def __init__(self, message: str, function: str = "", line: int = 0):
        self.message = message
        self.function = function
        self.line = line
        where = ": ".join(x for x in (function, f"line {line}" if line else "") if x)
        super().__init__(f"{where}: {message}" if where else message)


def ins(mnemonic, *operands, flags=(), cond="al") -> Instruction:
    return Instruction(mnemonic, tuple(operands), cond=cond, flags=frozenset(flags))


def load_const(reg: str, value: int, flags=()) -> List[Instruction]:
    """Materialize ``value`` into ``reg`` with mov, movw or movw/movt."""
    value &= 0xFFFFFFFF
    if is_modified_immediate(value):
        return [ins("mov", reg, Imm(value), flags=flags)]
    out = [ins("movw", reg, Imm(value & 0xFFFF), flags=flags)]
    if value >> 16:
        out.append(ins("movt", reg, Imm(value >> 16), flags=flags))
    return out


def add_const(rd: str, rn: str, value: int, flags=()) -> List[Instruction]:
    """rd = rn + value (value may be negative); empty when a no-op.

    Values outside the 12-bit immediate range need rd != rn.
    """
    if value == 0:
        return [] if rd == rn else [ins("mov", rd, rn, flags=flags)]
    op, mag = ("add", value) if value > 0 else ("sub", -value)
    if is_modified_immediate(mag):
        return [ins(op, rd, rn, Imm(mag), flags=flags)]
    if mag < 4096:
        return [ins(op + "w", rd, rn, Imm(mag), flags=flags)]
    if rd == rn:
        raise PassError(f"offset {value} needs a second register")
    return load_const(rd, value, flags) + [ins("add", rd, rd, rn, flags=flags)]


def effective_address(dst: str, mem: Mem, extra: int = 0, flags=()) -> List[Instruction]:
    """dst = address accessed by ``mem`` (pre-writeback view for post-index)."""
    if mem.index is not None:
        if mem.shift:
            seq = [ins("add", dst, mem.base, Shifted(mem.index, "lsl", mem.shift), flags=flags)]
        else:
            seq = [ins("add", dst, mem.base, mem.index, flags=flags)]
        if extra:
            seq += add_const(dst, dst, extra, flags)
        return seq
    off = (0 if mem.mode == "post" else mem.offset) + extra
    if off == 0:
        return [ins("mov", dst, mem.base, flags=flags)]
    return add_const(dst, mem.base, off, flags)


def stores_lr(i: Instruction) -> bool:
    m = i.mnemonic
    if m in ("push",):
        return "lr" in i.operands[0].regs
    if m in ("stm", "stmdb"):
        return "lr" in i.operands[1].regs
    if m in ("str", "strt"):
        return i.operands[0] == "lr"
    if m == "strd":
        return "lr" in i.operands[:2]
    return False


def has_flag(i, flag: Flag) -> bool:
    return isinstance(i, Instruction) and flag in i.flags
