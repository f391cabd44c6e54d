"""Store hardening: privileged stores become STRT/STRBT/STRHT sequences.

Also provides the Invert variant (only the shadow-stack store changes) and
the SFI variant (every store address is masked with two BICs).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, List, Optional

from ..asm.isa import (
    CALLEE_SAVED, Flag, Imm, Instruction, Kind, Mem, SINGLE_STORES, UNPRIV_FOR,
    classify_instruction, is_modified_immediate, multi_base, reg_defs, reg_uses,
)
from ..asm.itblock import dissolve_it_blocks
from ..asm.liveness import Liveness
from ..asm.program import Function, Program
from ..layout import DEFAULT_LAYOUT, MemoryLayout
from .common import PassError, add_const, effective_address, ins, load_const

H = (Flag.HARDENED,)
G = (Flag.SFI_GUARD,)


class HardenMode(enum.Enum):
    SILHOUETTE = "silhouette"
    INVERT = "invert"
    SFI = "sfi"

    @classmethod
    def parse(cls, text) -> "HardenMode":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).lower())
        except ValueError:
            raise PassError(f"unknown mode '{text}'") from None


@dataclass(frozen=True)
class BicMaskPair:
    mask1: int
    mask2: int

    def apply(self, addr: int) -> int:
        return addr & ~self.mask1 & ~self.mask2 & 0xFFFFFFFF


def bic_masks(layout: MemoryLayout = DEFAULT_LAYOUT) -> BicMaskPair:
    """Two BIC immediates that steer any address out of the shadow region.

    mask1 clears a bit that is set across the whole (aligned) shadow band;
    mask2 clears every bit above the highest RAM address.
    """
    base, size = layout.shadow_base, layout.shadow_size
    if size <= 0 or size & (size - 1):
        raise PassError("unmaskable layout: shadow region size is not a power of two")
    if base % size:
        raise PassError("unmaskable layout: shadow region not aligned to its size")
    order = size.bit_length() - 1
    high = base >> order
    if high == 0:
        raise PassError("unmaskable layout: shadow region at address 0")
    mask1 = (high & -high) << order
    k = (layout.ram_end - 1).bit_length()
    mask2 = ~((1 << k) - 1) & 0xFFFFFFFF
    if mask1 & mask2:
        raise PassError("unmaskable layout: shadow selector bit above RAM")
    if not (is_modified_immediate(mask1) and is_modified_immediate(mask2)):
        raise PassError("unmaskable layout")
    return BicMaskPair(mask1, mask2)


class _NeedSpill(Exception):
    pass


class _Scratch:
    """Hands out scratch registers: free ones first, then pre-spilled ones."""

    def __init__(self, finder: Callable, spilled=(), taken=()):
        self.finder = finder
        self.spilled = list(spilled)
        self.taken = set(taken)

    def get(self, *excluded) -> str:
        excl = self.taken | set(excluded)
        reg = self.finder(excl) if self.finder else None
        if reg is None:
            for r in self.spilled:
                if r not in excl:
                    reg = r
                    break
        if reg is None:
            raise _NeedSpill()
        self.taken.add(reg)
        return reg


# -- Silhouette ------------------------------------------------------------


def _unpriv_single(m: str, rt: str, mem: Mem, sc: _Scratch) -> List[Instruction]:
    up = UNPRIV_FOR[m]
    base = mem.base
    if mem.mode == "offset":
        if mem.index is None and 0 <= mem.offset <= 255:
            return [ins(up, rt, Mem(base, mem.offset), flags=H)]
        s = sc.get(rt, base, mem.index)
        return effective_address(s, mem, flags=H) + [ins(up, rt, Mem(s), flags=H)]
    if rt == base:
        raise PassError(f"writeback store of its own base register '{rt}'")
    update = _base_update(base, mem.offset, sc, rt)
    store = [ins(up, rt, Mem(base), flags=H)]
    return update + store if mem.mode == "pre" else store + update


def _base_update(base: str, delta: int, sc: _Scratch, *busy, flags=H) -> List[Instruction]:
    try:
        return add_const(base, base, delta, flags)
    except PassError:
        s = sc.get(base, *busy)
        return load_const(s, delta, flags) + [ins("add", base, base, s, flags=flags)]


def _silhouette(i: Instruction, sc: _Scratch) -> List[Instruction]:
    m, ops = i.mnemonic, i.operands
    if m in SINGLE_STORES:
        return _unpriv_single(m, ops[0], ops[1], sc)
    if m == "strd":
        rt, rt2, mem = ops
        if mem.mode == "offset":
            return (_unpriv_single("str", rt, Mem(mem.base, mem.offset), sc)
                    + _unpriv_single("str", rt2, Mem(mem.base, mem.offset + 4), sc))
        if mem.base in (rt, rt2):
            raise PassError("writeback strd of its own base register")
        body = [ins("strt", rt, Mem(mem.base), flags=H), ins("strt", rt2, Mem(mem.base, 4), flags=H)]
        update = _base_update(mem.base, mem.offset, sc, rt, rt2)
        return update + body if mem.mode == "pre" else body + update
    if m in ("push", "stm", "stmdb"):
        return _multiple(i, sc, lambda r, base, off: [ins("strt", r, Mem(base, off), flags=H)])
    if m == "vstr":
        return _fp_store(i, sc, lambda r, mem: _unpriv_single("str", r, mem, sc))
    if m == "vstm":
        return _vstm(i, sc, lambda r, mem: _unpriv_single("str", r, mem, sc))
    raise PassError(f"cannot harden '{i}'")


def _multiple(i: Instruction, sc: _Scratch, store, flags=H) -> List[Instruction]:
    """push/stm/stmdb as an explicit base adjust plus one store per register.

    Stores run from the highest address down so a prologue's return address
    is the first word written.
    """
    m, ops = i.mnemonic, i.operands
    regs = ops[-1].regs
    n = 4 * len(regs)
    if m == "push":
        base, wb, before = "sp", True, True
    else:
        base, wb = multi_base(i)
        before = m == "stmdb"
    if wb and base in regs:
        raise PassError(f"store-multiple with writeback includes its base '{base}'")
    if "sp" in regs or "pc" in regs:
        raise PassError(f"cannot store sp/pc in '{i}'")
    out: List[Instruction] = []
    if before and wb:
        out += add_const(base, base, -n, flags)
        addr, start = base, 0
    elif before:
        addr = sc.get(base, *regs)
        out += add_const(addr, base, -n, flags)
        start = 0
    else:
        addr, start = base, 0
    for k in reversed(range(len(regs))):
        out += store(regs[k], addr, start + 4 * k)
    if wb and not before:
        out += add_const(base, base, n, flags)
    return out


def _fp_store(i: Instruction, sc: _Scratch, word_store) -> List[Instruction]:
    reg, mem = i.operands
    if reg.startswith("s"):
        a = sc.get(mem.base)
        return [ins("vmov", a, reg, flags=H)] + word_store(a, mem)
    a = sc.get(mem.base)
    b = sc.get(mem.base, a)
    return ([ins("vmov", a, b, reg, flags=H)]
            + word_store(a, mem) + word_store(b, Mem(mem.base, mem.offset + 4)))


def _vstm(i: Instruction, sc: _Scratch, word_store) -> List[Instruction]:
    base, wb = multi_base(i)
    out: List[Instruction] = []
    off = 0
    for reg in i.operands[1].regs:
        out += _fp_store(Instruction("vstr", (reg, Mem(base, off))), sc, word_store)
        sc.taken.clear()
        off += 4 if reg.startswith("s") else 8
    if wb:
        out += add_const(base, base, off, H)
    return out


# -- SFI -------------------------------------------------------------------


def _guard(s: str, src: str, masks: BicMaskPair) -> List[Instruction]:
    if src == "sp":
        # BIC cannot take sp as its source operand
        return [ins("mov", s, "sp", flags=G)] + _guard(s, s, masks)
    return [ins("bic", s, src, Imm(masks.mask1), flags=G),
            ins("bic", s, s, Imm(masks.mask2), flags=G)]


def _guarded_single(m: str, rt: str, mem: Mem, sc: _Scratch, masks) -> List[Instruction]:
    s = sc.get(rt, mem.base, mem.index)
    if mem.mode == "offset":
        if mem.index is None and mem.offset == 0:
            return _guard(s, mem.base, masks) + [ins(m, rt, Mem(s), flags=G)]
        return (effective_address(s, mem, flags=G) + _guard(s, s, masks)
                + [ins(m, rt, Mem(s), flags=G)])
    update = _base_update(mem.base, mem.offset, sc, rt, s, flags=G)
    store = _guard(s, mem.base, masks) + [ins(m, rt, Mem(s), flags=G)]
    return update + store if mem.mode == "pre" else store + update


def _sfi(i: Instruction, sc: _Scratch, masks: BicMaskPair) -> List[Instruction]:
    m, ops = i.mnemonic, i.operands
    if m in SINGLE_STORES:
        return _guarded_single(m, ops[0], ops[1], sc, masks)
    if m == "strd":
        rt, rt2, mem = ops
        if mem.mode == "offset":
            first = _guarded_single("str", rt, Mem(mem.base, mem.offset), sc, masks)
            sc.taken.clear()
            return first + _guarded_single("str", rt2, Mem(mem.base, mem.offset + 4), sc, masks)
        s = sc.get(rt, rt2, mem.base)
        body = (_guard(s, mem.base, masks) + [ins("str", rt, Mem(s), flags=G)]
                + add_const(s, mem.base, 4, G) + _guard(s, s, masks)
                + [ins("str", rt2, Mem(s), flags=G)])
        update = _base_update(mem.base, mem.offset, sc, rt, rt2, s, flags=G)
        return update + body if mem.mode == "pre" else body + update
    if m in ("push", "stm", "stmdb"):
        regs = ops[-1].regs
        s = sc.get(*regs, multi_base(i)[0] if m != "push" else "sp")

        def store(r, base, off):
            addr = add_const(s, base, off, G) if off else []
            return addr + _guard(s, s if off else base, masks) + [ins("str", r, Mem(s), flags=G)]
        return _multiple(i, sc, store, G)
    if m in ("vstr",):
        reg, mem = ops
        s = sc.get(mem.base)
        return effective_address(s, mem, flags=G) + _guard(s, s, masks) + [
            ins("vstr", reg, Mem(s), flags=G)]
    if m == "vstm":
        base, wb = multi_base(i)
        s = sc.get(base)
        out: List[Instruction] = []
        off = 0
        for reg in ops[1].regs:
            out += add_const(s, base, off, G) if off else [ins("mov", s, base, flags=G)]
            out += _guard(s, s, masks) + [ins("vstr", reg, Mem(s), flags=G)]
            off += 4 if reg.startswith("s") else 8
        if wb:
            out += add_const(base, base, off, G)
        return out
    raise PassError(f"cannot guard '{i}'")


def guard_strex(i: Instruction, masks: BicMaskPair, base_dead: bool,
                sc: Optional[_Scratch] = None, flags=H) -> List[Instruction]:
    """Two BICs right before the STREX; in place when the base is dead afterwards."""
    rd, rt, mem = i.operands
    if base_dead and mem.offset == 0 and mem.base not in (rd, rt):
        return [ins("bic", mem.base, mem.base, Imm(masks.mask1), flags=flags),
                ins("bic", mem.base, mem.base, Imm(masks.mask2), flags=flags), i]
    if sc is None:
        raise PassError("strex guard needs a scratch register")
    s = sc.get(rd, rt, mem.base)
    pre = add_const(s, mem.base, mem.offset, flags) if mem.offset else []
    src = s if mem.offset else mem.base
    return pre + [ins("bic", s, src, Imm(masks.mask1), flags=flags),
                  ins("bic", s, s, Imm(masks.mask2), flags=flags),
                  Instruction("strex", (rd, rt, Mem(s)), flags=i.flags)]


# -- Invert ----------------------------------------------------------------


def _invert_ss(i: Instruction) -> List[Instruction]:
    rt, mem = i.operands
    if mem.index is not None:
        return [ins("add", mem.index, "sp", mem.index, flags=(Flag.SHADOW_STACK,)),
                Instruction("strt", (rt, Mem(mem.index)), flags=i.flags | frozenset(H))]
    if 0 <= mem.offset <= 255 and mem.mode == "offset":
        return [Instruction("strt", (rt, mem), flags=i.flags | frozenset(H))]
    raise PassError(f"unsupported shadow-stack store form '{i}'")


# -- driver ----------------------------------------------------------------


def _adjust_sp(i: Instruction, delta: int) -> Instruction:
    ops = []
    for op in i.operands:
        if isinstance(op, Mem) and op.base == "sp" and op.mode == "offset" and op.index is None:
            op = Mem("sp", op.offset + delta)
        elif isinstance(op, Mem) and op.base == "sp":
            raise _NeedSpill()
        ops.append(op)
    return Instruction(i.mnemonic, tuple(ops), i.cond, i.setflags, i.wide, i.flags, i.line)


def _spill_regs(i: Instruction, count: int) -> list:
    busy = reg_uses(i) | reg_defs(i)
    regs = [r for r in CALLEE_SAVED if r not in busy]
    if len(regs) < count:
        raise PassError(f"no register available to spill around '{i}'")
    return regs[:count]


def harden_store(i: Instruction, layout: MemoryLayout = DEFAULT_LAYOUT,
                 scratch_finder: Optional[Callable] = None,
                 mode: HardenMode = HardenMode.SILHOUETTE, spill: bool = True,
                 base_dead: bool = False) -> List[Instruction]:
    """Rewrite one store; ``scratch_finder(excluded)`` returns a dead register or None."""
    mode = HardenMode.parse(mode)
    kind = classify_instruction(i)
    if not kind.is_store or kind is Kind.UNPRIVILEGED_STORE:
        return [i]
    if Flag.SHADOW_STACK_STORE in i.flags:
        return _invert_ss(i) if mode is HardenMode.INVERT else [i]
    if mode is HardenMode.INVERT or i.flags & {Flag.HARDENED, Flag.SFI_GUARD, Flag.CFI_CHECK}:
        return [i]
    if any(r in ("sp", "pc") for r in _stored_regs(i)):
        raise PassError(f"store of sp/pc is not supported: '{i}'", line=i.line)
    masks = bic_masks(layout) if kind is Kind.STORE_EXCLUSIVE or mode is HardenMode.SFI else None
    for count in range(0, 3):
        if count and not spill:
            raise PassError(f"no scratch register for '{i}' and spilling disabled", line=i.line)
        spilled = _spill_regs(i, count) if count else []
        try:
            target = _adjust_sp(i, 4 * count) if count else i
            sc = _Scratch(scratch_finder, spilled)
            if kind is Kind.STORE_EXCLUSIVE:
                seq = guard_strex(target, masks, base_dead and not count, sc,
                                  H if mode is HardenMode.SILHOUETTE else G)
            elif mode is HardenMode.SFI:
                seq = _sfi(target, sc, masks)
            else:
                seq = _silhouette(target, sc)
        except _NeedSpill:
            continue
        return _wrap_spill(seq, spilled, mode)
    raise PassError(f"no scratch register for '{i}'", line=i.line)


def _wrap_spill(seq: list, spilled: list, mode: HardenMode) -> list:
    if not spilled:
        return seq
    pre, post = [], []
    for r in spilled:
        if mode is HardenMode.SFI:
            pre.append(ins("str", r, Mem("sp", -4, mode="pre"), flags=G))
        else:
            pre += [ins("sub", "sp", "sp", Imm(4), flags=H), ins("strt", r, Mem("sp"), flags=H)]
    for r in reversed(spilled):
        post.append(ins("ldr", r, Mem("sp", 4, mode="post"), flags=H))
    return pre + seq + post


def _stored_regs(i: Instruction) -> list:
    m, ops = i.mnemonic, i.operands
    if m in SINGLE_STORES:
        return [ops[0]]
    if m == "strd":
        return [ops[0], ops[1]]
    if m == "strex":
        return [ops[1]]
    if m in ("push",):
        return list(ops[0].regs)
    if m in ("stm", "stmdb"):
        return list(ops[1].regs)
    return []


def _needs_rewrite(i: Instruction, mode: HardenMode) -> bool:
    if not isinstance(i, Instruction):
        return False
    kind = classify_instruction(i)
    if not kind.is_store or kind is Kind.UNPRIVILEGED_STORE:
        return False
    if Flag.SHADOW_STACK_STORE in i.flags:
        return mode is HardenMode.INVERT
    if i.flags & {Flag.HARDENED, Flag.SFI_GUARD, Flag.CFI_CHECK}:
        return False
    if kind is Kind.STORE_EXCLUSIVE:
        return mode is not HardenMode.INVERT
    return mode is not HardenMode.INVERT


def harden_function(f: Function, mode=HardenMode.SILHOUETTE,
                    layout: MemoryLayout = DEFAULT_LAYOUT, spill: bool = True) -> Function:
    mode = HardenMode.parse(mode)
    if f.exempt:
        return f
    live = Liveness(f)

    def rewrite(idx, it):
        def finder(excluded):
            free = live.free_registers(idx, excluded)
            return free[0] if free else None
        base_dead = False
        if it.mnemonic == "strex":
            base_dead = it.operands[2].base not in live.live_out[idx]
        try:
            return harden_store(it.with_cond("al"), layout, finder, mode, spill, base_dead)
        except PassError as exc:
            raise PassError(exc.message, f.name, it.line) from None

    try:
        body = dissolve_it_blocks(f.body, lambda idx, it: _needs_rewrite(it, mode), rewrite)
    except ValueError as exc:
        raise PassError(str(exc), f.name) from None
    return f.with_body(body)


def harden_program(p: Program, mode=HardenMode.SILHOUETTE,
                   layout: MemoryLayout = DEFAULT_LAYOUT, spill: bool = True) -> Program:
    return p.replace_functions(harden_function(f, mode, layout, spill) for f in p.functions)


def changed_sites(before: Function, after: Function) -> int:
    """Number of original instructions that no longer appear verbatim."""
    kept = list(after.instructions)
    changed = 0
    for it in before.instructions:
        if it in kept:
            kept.remove(it)
        else:
            changed += 1
    return changed


__all__ = [
    "BicMaskPair", "HardenMode", "bic_masks", "changed_sites", "guard_strex",
    "harden_function", "harden_program", "harden_store",
]
