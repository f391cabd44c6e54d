from __future__ import annotations

from typing import Callable, Iterable, List

from .isa import ITBlockSpec, Instruction, ends_it_block, invert_cond
from .program import Data, Label


class ITError(ValueError):
    pass


def rebuild_it_blocks(seq: Iterable[Instruction]) -> List[Instruction]:
    """Insert IT headers covering every conditional instruction in ``seq``.

    All conditional instructions must share one base condition C (each is C
    or not-C).  Blocks hold at most four instructions; an unconditional
    instruction or a branch closes the current block.
    """
    seq = list(seq)
    conds = {i.cond for i in seq if i.conditional}
    if conds:
        base = next(i.cond for i in seq if i.conditional)
        allowed = {base, invert_cond(base)}
        if conds - allowed:
            raise ITError(f"mixed conditions in IT rebuild: {sorted(conds)}")
    out: List[Instruction] = []
    idx = 0
    while idx < len(seq):
        ins = seq[idx]
        if ins.mnemonic == "it":
            raise ITError("rebuild input must not contain IT headers")
        if not ins.conditional:
            out.append(ins)
            idx += 1
            continue
        block = [ins]
        idx += 1
        while len(block) < 4 and not ends_it_block(block[-1]) and idx < len(seq) \
                and seq[idx].conditional:
            block.append(seq[idx])
            idx += 1
        first = block[0].cond
        pattern = "".join("T" if b.cond == first else "E" for b in block)
        out.append(Instruction("it", (ITBlockSpec(first, pattern),)))
        out.extend(block)
    return out


def dissolve_it_blocks(body, needs_rewrite: Callable, rewrite: Callable) -> list:
    """Walk a function body, rewriting instructions; IT blocks containing a
    rewritten instruction are dissolved and rebuilt around the new code.

    ``needs_rewrite(idx, ins)`` selects sites; ``rewrite(idx, ins)`` returns
    the replacement instruction list (conditions are applied here).
    """
    body = list(body)
    out: list = []
    idx = 0
    while idx < len(body):
        item = body[idx]
        if isinstance(item, (Label, Data)):
            out.append(item)
            idx += 1
            continue
        if item.mnemonic == "it":
            count = len(item.operands[0].pattern)
            members = list(range(idx + 1, idx + 1 + count))
            if any(needs_rewrite(j, body[j]) for j in members):
                seq = []
                for j in members:
                    ins = body[j]
                    if needs_rewrite(j, ins):
                        seq.extend(r.with_cond(ins.cond) for r in rewrite(j, ins))
                    else:
                        seq.append(ins)
                out.extend(rebuild_it_blocks(seq))
            else:
                out.append(item)
                out.extend(body[j] for j in members)
            idx += 1 + count
            continue
        if needs_rewrite(idx, item):
            out.extend(rewrite(idx, item))
        else:
            out.append(item)
        idx += 1
    return out
