"""Parallel shadow stack: duplicate lr at a fixed offset, return through the copy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

from ..asm.isa import (
    Flag, Imm, Instruction, Kind, LabelRef, Mem, RegList, WB, classify_instruction,
    writes_sp,
)
from ..asm.itblock import dissolve_it_blocks
from ..asm.program import Function, Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout
from .common import PassError, ins, load_const, stores_lr

SCRATCH = "ip"
EXPIRE_SYMBOL = "__sjmap_expire"
SETJMP_SYMBOL = "setjmp"

SS_STORE = (Flag.SHADOW_STACK_STORE,)
SS_LOAD = (Flag.SHADOW_STACK_LOAD,)
SS_AUX = (Flag.SHADOW_STACK,)


@dataclass(frozen=True)
class ShadowStackPlan:
    offset: int
    scratch: str = SCRATCH

    @classmethod
    def for_layout(cls, layout: MemoryLayout) -> "ShadowStackPlan":
        if layout.shadow_stack_offset <= 0:
            raise PassError("shadow stack offset must be positive")
        return cls(layout.shadow_stack_offset)


def check_constant_frame(f: Function) -> None:
    """Raise unless every sp update in ``f`` is by a compile-time constant."""
    for i in f.instructions:
        if not writes_sp(i):
            continue
        m, ops = i.mnemonic, i.operands
        if m in ("add", "sub", "addw", "subw"):
            if isinstance(ops[-1], Imm) and (len(ops) == 2 or ops[1] == "sp"):
                continue
            raise PassError("dynamic stack allocation", f.name, i.line)
        loaded = set()
        if m in ("pop", "ldm"):
            loaded = set(ops[-1].regs)
        elif m in ("ldr", "ldrex", "ldrb", "ldrh"):
            loaded = {ops[0]}
        elif m == "ldrd":
            loaded = {ops[0], ops[1]}
        if "sp" in loaded:
            raise PassError("dynamic stack allocation: sp loaded from memory", f.name, i.line)
        if m in _WRITEBACK_FORMS:
            continue  # writeback on an sp base moves sp by a constant
        raise PassError("dynamic stack allocation: sp copied from a register", f.name, i.line)


_WRITEBACK_FORMS = {"push", "pop", "ldm", "stm", "stmdb", "vstm", "vldm", "str", "strb", "strh",
                    "strd", "ldr", "ldrb", "ldrh", "ldrd", "strt", "strbt", "strht"}


def _lr_slot(i: Instruction) -> Optional[int]:
    """Displacement of lr's slot from sp after ``i`` executes, or None if not sp-based."""
    m, ops = i.mnemonic, i.operands
    if m == "push" or (m == "stmdb" and ops[0] == WB("sp")):
        regs = ops[-1].regs
        return 4 * regs.index("lr")
    if m == "str" and isinstance(ops[1], Mem) and ops[1].base == "sp" and ops[1].index is None:
        mem = ops[1]
        if mem.mode == "pre":
            return 0
        if mem.mode == "post":
            return -mem.offset
        return mem.offset
    return None


def _calls_setjmp(f: Function) -> bool:
    return any(i.mnemonic == "bl" and i.operands[0] == LabelRef(SETJMP_SYMBOL)
               for i in f.instructions)


def _shadow_load(plan: ShadowStackPlan, displacement: int = 0) -> List[Instruction]:
    return (load_const(plan.scratch, plan.offset + displacement, SS_LOAD)
            + [ins("ldr", "lr", Mem("sp", index=plan.scratch), flags=SS_LOAD)])


def _is_epilogue(i: Instruction) -> bool:
    m, ops = i.mnemonic, i.operands
    if m == "pop" or (m == "ldm" and ops[0] == WB("sp")):
        return bool({"pc", "lr"} & set(ops[-1].regs))
    if m == "ldr" and ops[0] in ("pc", "lr") and isinstance(ops[1], Mem) and ops[1].base == "sp":
        return True
    return classify_instruction(i) is Kind.RETURN and not (m == "bx" and ops[0] == "lr")


def rewrite_epilogue(i: Instruction, layout: MemoryLayout = DEFAULT_LAYOUT,
                     expire: bool = False, function: str = "") -> List[Instruction]:
    """Replace one lr/pc reload with the shadow-stack recipe (unconditional form)."""
    plan = ShadowStackPlan.for_layout(layout)
    m, ops = i.mnemonic, i.operands
    sj = [ins("bl", LabelRef(EXPIRE_SYMBOL), flags=(Flag.SETJMP_EXPIRE,))] if expire else []
    tail = [ins("add", "sp", "sp", Imm(4), flags=SS_LOAD)]
    if m == "pop" or m == "ldm":
        regs = ops[-1].regs
        if "pc" in regs and "lr" in regs:
            raise PassError("epilogue pops both lr and pc", function, i.line)
        rest = tuple(r for r in regs if r not in ("pc", "lr"))
        out = [ins("pop", RegList(rest))] if rest else []
        out += sj + _shadow_load(plan) + tail
        if "pc" in regs:
            out.append(ins("bx", "lr", flags=SS_LOAD))
        return out
    if m == "ldr":
        mem = ops[1]
        if mem.index is None and mem.mode == "post" and mem.offset == 4:
            out = sj + _shadow_load(plan) + tail
            if ops[0] == "pc":
                out.append(ins("bx", "lr", flags=SS_LOAD))
            return out
        if ops[0] == "lr" and mem.index is None and mem.mode == "offset":
            return sj + _shadow_load(plan, mem.offset)
    raise PassError(f"unrecognized epilogue '{i}' (manual review required)", function, i.line)


def transform_function(f: Function, layout: MemoryLayout = DEFAULT_LAYOUT) -> Function:
    if f.exempt:
        return f
    check_constant_frame(f)
    body = list(f.body)
    first = next((k for k, it in enumerate(body)
                  if isinstance(it, Instruction) and stores_lr(it)), None)
    if first is None:
        for it in f.instructions:
            if _is_epilogue(it):
                raise PassError(f"epilogue '{it}' without a stacked return address",
                                f.name, it.line)
        return f
    if any(Flag.SHADOW_STACK_STORE in it.flags for it in f.instructions):
        return f  # already instrumented
    plan = ShadowStackPlan.for_layout(layout)
    store = body[first]
    disp = _lr_slot(store)
    if disp is None or store.conditional:
        raise PassError(f"unrecognized prologue store of lr '{store}'", f.name, store.line)
    prologue = (load_const(plan.scratch, plan.offset + disp, SS_AUX)
                + [ins("str", "lr", Mem("sp", index=plan.scratch), flags=SS_STORE)])
    body[first + 1:first + 1] = prologue
    expire = _calls_setjmp(f)
    skip = set(range(first, first + 1 + len(prologue)))

    def wanted(idx, it):
        return idx not in skip and _is_epilogue(it)

    def rewrite(idx, it):
        return rewrite_epilogue(it.with_cond("al"), layout, expire, f.name)

    try:
        new_body = dissolve_it_blocks(body, wanted, rewrite)
    except ValueError as exc:
        raise PassError(str(exc), f.name) from None
    return f.with_body(new_body)


def transform_program(p: Program, layout: MemoryLayout = DEFAULT_LAYOUT) -> Program:
    funcs = [transform_function(f, layout) for f in p.functions]
    out = p.replace_functions(funcs)
    if any(_calls_setjmp(f) for f in p.functions if not f.exempt):
        out = out.with_externals(EXPIRE_SYMBOL)
    return out


def check_i1(f: Function) -> bool:
    """Static I1: a shadow-stack store of lr exists, or lr is never stored."""
    if f.exempt:
        return True
    lr_stores = [i for i in f.instructions if stores_lr(i)]
    if not lr_stores:
        return True
    return any(Flag.SHADOW_STACK_STORE in i.flags and i.operands[0] == "lr" for i in lr_stores)
