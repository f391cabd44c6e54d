"""Backward register liveness over a function's body.

Each body item is a node.  Returns and tail transfers leave the function
with a fixed live-out set; calls read the argument registers and kill
nothing beyond ``lr``.  Indirect branches are function exits.
"""

from __future__ import annotations

from typing import Iterable, Optional

from .isa import (
    ARG_REGS, CALLEE_SAVED, Kind, LabelRef, Instruction, SCRATCH_CANDIDATES,
    classify_instruction, is_terminator, reg_defs, reg_uses,
)
from .program import Data, Function, Label

RETURN_LIVE = frozenset({"r0", "r1", "sp"} | set(CALLEE_SAVED))
TAIL_LIVE = RETURN_LIVE | frozenset(ARG_REGS) | {"lr"}
# ip first: it is the conventional intra-procedure scratch register
SCRATCH_ORDER = ("ip", "r3", "r2", "r1", "r0") + CALLEE_SAVED


def table_targets(body, idx: int) -> list:
    """Labels named by the jump table following a tbb/tbh at ``idx``."""
    targets = []
    j = idx + 1
    while j < len(body) and isinstance(body[j], Label):
        j += 1
    while j < len(body) and isinstance(body[j], Data):
        if body[j].directive in ("byte", "hword"):
            for expr in body[j].values:
                name = expr.strip("() ").split("-")[0].strip("( ")
                targets.append(name)
        j += 1
    return targets


class Liveness:
    def __init__(self, f: Function):
        self.function = f
        body = f.body
        labels = f.labels()
        n = len(body)
        self.succ = [[] for _ in range(n)]
        self.exit_live = [frozenset() for _ in range(n)]
        self.uses = [frozenset() for _ in range(n)]
        self.kills = [frozenset() for _ in range(n)]
        for idx, item in enumerate(body):
            nxt = [idx + 1] if idx + 1 < n else []
            if not isinstance(item, Instruction):
                self.succ[idx] = nxt
                continue
            self.uses[idx] = frozenset(reg_uses(item))
            self.kills[idx] = frozenset(reg_defs(item)) if not item.conditional else frozenset()
            kind = classify_instruction(item)
            fall = nxt if not (is_terminator(item) and not item.conditional) else []
            if kind is Kind.RETURN:
                self.exit_live[idx] = RETURN_LIVE
                self.succ[idx] = fall
            elif item.mnemonic in ("b", "cbz", "cbnz"):
                target = item.operands[-1]
                if isinstance(target, LabelRef) and target.name in labels:
                    self.succ[idx] = fall + [labels[target.name]]
                else:
                    self.exit_live[idx] = TAIL_LIVE
                    self.succ[idx] = fall
            elif item.mnemonic in ("tbb", "tbh"):
                self.succ[idx] = [labels[t] for t in table_targets(body, idx) if t in labels]
            elif kind is Kind.INDIRECT_BRANCH:
                self.exit_live[idx] = TAIL_LIVE
                self.succ[idx] = fall
            else:
                self.succ[idx] = fall
        self.live_in = [frozenset() for _ in range(n)]
        self.live_out = [frozenset() for _ in range(n)]
        self._solve()

    def _solve(self):
        n = len(self.succ)
        changed = True
        while changed:
            changed = False
            for idx in range(n - 1, -1, -1):
                out = set(self.exit_live[idx])
                for s in self.succ[idx]:
                    out |= self.live_in[s]
                inn = self.uses[idx] | (frozenset(out) - self.kills[idx])
                if inn != self.live_in[idx] or out != self.live_out[idx]:
                    self.live_in[idx] = frozenset(inn)
                    self.live_out[idx] = frozenset(out)
                    changed = True

    def live_at(self, position: int) -> frozenset:
        return self.live_in[position] | self.live_out[position]

    def free_registers(self, position: int, excluded: Iterable = ()) -> list:
        busy = self.live_at(position) | set(excluded)
        if 0 <= position < len(self.function.body):
            item = self.function.body[position]
            if isinstance(item, Instruction):
                busy |= reg_uses(item) | reg_defs(item)
        return [r for r in SCRATCH_ORDER if r not in busy]


def find_free_register(f: Function, position: int, excluded: Iterable = (),
                       liveness: Optional[Liveness] = None) -> Optional[str]:
    """A register in r0-r12 that is dead across body item ``position``, or None."""
    live = liveness or Liveness(f)
    free = live.free_registers(position, excluded)
    assert all(r in SCRATCH_CANDIDATES for r in free)
    return free[0] if free else None
