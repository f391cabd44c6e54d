"""Seeded-bug fixtures: each mutation must be caught by some checker."""

from __future__ import annotations

from dataclasses import replace

from ..asm.isa import Flag, Instruction, Mem
from ..asm.program import Program
from ..passes import PassError


def _rewrite(p: Program, pick, change, what: str) -> Program:
    funcs = []
    done = False
    for f in p.functions:
        body = list(f.body)
        if not done:
            for k, item in enumerate(body):
                if isinstance(item, Instruction) and pick(f, item):
                    new = change(item)
                    if new is None:
                        del body[k]
                    else:
                        body[k] = new
                    done = True
                    break
        funcs.append(f.with_body(body))
    if not done:
        raise PassError(f"no site for the '{what}' mutation")
    return p.replace_functions(funcs)


def wrong_offset(p: Program, function: str = None, delta: int = 4) -> Program:
    """Shift the offset of the first hardened data store (not the shadow-stack store)."""
    def pick(f, i):
        if function is not None and f.name != function:
            return False
        mem = next((o for o in i.operands if isinstance(o, Mem)), None)
        return (Flag.HARDENED in i.flags and i.mnemonic in ("strt", "strbt", "strht")
                and Flag.SHADOW_STACK_STORE not in i.flags and mem is not None
                and mem.base != "sp" and mem.index is None)

    def change(i):
        ops = tuple(replace(o, offset=o.offset + delta) if isinstance(o, Mem) else o for o in i.operands)
        return replace(i, operands=ops)
    return _rewrite(p, pick, change, "wrong-offset")


def missing_bic(p: Program, function: str = None) -> Program:
    """Drop the first SFI mask instruction."""
    def pick(f, i):
        return (function is None or f.name == function) and i.mnemonic == "bic" \
            and Flag.SFI_GUARD in i.flags
    return _rewrite(p, pick, lambda i: None, "missing-bic")


def missing_label_check(p: Program, function: str = None) -> Program:
    """Remove the label comparison guarding the first checked indirect branch."""
    def pick(f, i):
        return (function is None or f.name == function) and i.mnemonic == "b" \
            and i.cond == "ne" and Flag.CFI_CHECK in i.flags
    return _rewrite(p, pick, lambda i: None, "missing-label-check")


MUTATIONS = {"wrong-offset": wrong_offset, "missing-bic": missing_bic,
             "missing-label-check": missing_label_check}

__all__ = ["MUTATIONS", "missing_bic", "missing_label_check", "wrong_offset"]
