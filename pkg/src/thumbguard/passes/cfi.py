"""Coarse-grained forward-edge CFI with a single 0x4600 label."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

from ..asm.isa import (
    CALLEE_SAVED, Flag, Imm, Instruction, Kind, LABEL_HALFWORD, LabelRef, Mem, RegList,
    classify_instruction, mov_is_nop_label, reg_defs,
)
from ..asm.itblock import dissolve_it_blocks
from ..asm.liveness import Liveness
from ..asm.program import Data, Function, Label, Program
from .common import PassError, ins
from .store_harden import HardenMode

ABORT_SYMBOL = "__cfi_abort"
C = (Flag.CFI_CHECK,)


def label_instruction() -> Instruction:
    return ins("mov", "r0", "r0", flags=(Flag.CFI_LABEL,))


def has_label(f: Function) -> bool:
    first = next(iter(f.instructions), None)
    return first is not None and mov_is_nop_label(first)


def insert_function_labels(p: Program) -> Program:
    out = []
    for f in p.functions:
        if f.address_taken and not f.exempt and not has_label(f):
            f = f.with_body((label_instruction(),) + f.body)
        out.append(f)
    return p.replace_functions(out)


def is_checked_branch(i: Instruction) -> bool:
    """blx rN, or bx rN used as a tail call."""
    kind = classify_instruction(i)
    if kind is Kind.INDIRECT_CALL:
        return True
    return i.mnemonic == "bx" and i.operands[0] != "lr"


def instrument_indirect_branch(i: Instruction, scratch: Optional[str] = None,
                               mode: HardenMode = HardenMode.SILHOUETTE,
                               spill_choices=CALLEE_SAVED) -> List[Instruction]:
    """Label check before ``i``; spills a register when ``scratch`` is None."""
    if i.conditional:
        raise PassError(f"conditional indirect branch '{i}' is not supported", line=i.line)
    target = i.operands[0]
    if target in ("sp", "pc"):
        raise PassError(f"indirect branch through {target}", line=i.line)
    s = scratch
    pre: List[Instruction] = []
    restore: List[Instruction] = []
    if s is None:
        s = next(r for r in spill_choices if r != target)
        if mode is HardenMode.SILHOUETTE:
            pre = [ins("sub", "sp", "sp", Imm(4), flags=C), ins("strt", s, Mem("sp"), flags=C)]
            restore = [ins("ldr", s, Mem("sp", 4, mode="post"), flags=C)]
        else:
            # a regular store on the spill path, as in the inverted design
            pre = [ins("push", RegList((s,)), flags=C)]
            restore = [ins("pop", RegList((s,)), flags=C)]
    check = [
        ins("bic", s, target, Imm(1), flags=C),
        ins("ldrh", s, Mem(s), flags=C),
        ins("cmp", s, Imm(LABEL_HALFWORD), flags=C),
    ]
    # the restore sits before the bne so neither path leaks the spill slot
    return pre + check + restore + [ins("b", LabelRef(ABORT_SYMBOL), cond="ne", flags=C), i]


def _other_indirect(i: Instruction) -> bool:
    kind = classify_instruction(i)
    return kind is Kind.INDIRECT_BRANCH and i.mnemonic not in ("bx", "tbb", "tbh")


def instrument_function(f: Function, mode=HardenMode.SILHOUETTE,
                        finder: Optional[Callable] = None) -> Function:
    if f.exempt:
        return f
    mode = HardenMode.parse(mode)
    live = Liveness(f)

    for it in f.instructions:
        if _other_indirect(it):
            raise PassError(f"unsupported computed branch '{it}'", f.name, it.line)

    def wanted(idx, it):
        return is_checked_branch(it) and Flag.CFI_CHECK not in it.flags and not _already(f, idx)

    def rewrite(idx, it):
        if it.conditional:
            raise PassError(f"conditional indirect branch '{it}' is not supported", f.name, it.line)
        free = live.free_registers(idx, {it.operands[0]})
        try:
            return instrument_indirect_branch(it, free[0] if free else None, mode)
        except PassError as exc:
            raise PassError(exc.message, f.name, it.line) from None

    return f.with_body(dissolve_it_blocks(f.body, wanted, rewrite))


def _already(f: Function, idx: int) -> bool:
    """True when the instruction at idx is preceded by an inserted check."""
    prev = f.body[idx - 1] if idx > 0 else None
    return isinstance(prev, Instruction) and Flag.CFI_CHECK in prev.flags and prev.mnemonic == "b"


@dataclass
class JumpTableReport:
    violations: list = field(default_factory=list)  # (function, line, message)
    tables: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _table_entries(body, idx: int) -> tuple:
    """(table label, [(target, base label)]) for the table after body[idx]."""
    j = idx + 1
    label = None
    if j < len(body) and isinstance(body[j], Label):
        label = body[j].name
        j += 1
    entries = []
    while j < len(body) and isinstance(body[j], Data) and body[j].directive in ("byte", "hword", "align"):
        for expr in body[j].values if body[j].directive != "align" else ():
            inner = expr.replace("(", "").replace(")", "").split("/")[0]
            parts = [x.strip() for x in inner.split("-")]
            entries.append((parts[0], parts[1] if len(parts) > 1 else None))
        j += 1
    return label, entries


def verify_jump_tables(f: Function) -> JumpTableReport:
    report = JumpTableReport()
    body = f.body
    labels = f.labels()
    for idx, it in enumerate(body):
        if not isinstance(it, Instruction) or it.mnemonic not in ("tbb", "tbh"):
            continue
        report.tables += 1
        index = it.operands[0].index
        bound = _dominating_bound(body, idx, index)
        label, entries = _table_entries(body, idx)
        if bound is None:
            report.violations.append((f.name, it.line, "no dominating bounds check"))
            continue
        if len(entries) != bound:
            report.violations.append(
                (f.name, it.line, f"table has {len(entries)} entries, bound allows {bound}"))
        for target, base in entries:
            if target not in labels:
                report.violations.append((f.name, it.line, f"entry '{target}' outside function"))
            elif base is not None and base != label:
                report.violations.append((f.name, it.line, f"entry relative to '{base}'"))
    return report


def _dominating_bound(body, idx: int, index: str) -> Optional[int]:
    """Entry count permitted by a ``cmp index, #N`` + ``bhi``/``bhs`` guard.

    The guard must sit in the same straight-line run as the table branch
    (no label in between) and the index must not be redefined after it.
    """
    j = idx - 1
    while j >= 0:
        item = body[j]
        if isinstance(item, Label):
            return None
        if isinstance(item, Instruction):
            if item.mnemonic == "b" and item.cond in ("hi", "cs"):
                prev = j - 1
                while prev >= 0 and not isinstance(body[prev], Instruction):
                    if isinstance(body[prev], Label):
                        return None
                    prev -= 1
                if prev < 0:
                    return None
                cmp = body[prev]
                if cmp.mnemonic == "cmp" and cmp.operands[0] == index and \
                        isinstance(cmp.operands[1], Imm):
                    n = cmp.operands[1].value
                    return n + 1 if item.cond == "hi" else n
                return None
            if index in reg_defs(item) or item.mnemonic == "cmp":
                return None
        j -= 1
    return None


def cfi_program(p: Program, mode=HardenMode.SILHOUETTE, strict: bool = False) -> tuple:
    """Labels, indirect-branch checks and table verification; returns (program, reports)."""
    p = insert_function_labels(p)
    funcs = [instrument_function(f, mode) for f in p.functions]
    reports = {f.name: verify_jump_tables(f) for f in funcs if not f.exempt}
    if strict:
        for r in reports.values():
            if r.violations:
                fn, line, msg = r.violations[0]
                raise PassError(f"jump table: {msg}", fn, line)
    out = p.replace_functions(funcs)
    if any(Flag.CFI_CHECK in i.flags for f in funcs for i in f.instructions):
        out = out.with_externals(ABORT_SYMBOL)
    return out, reports

